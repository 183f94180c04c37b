"""Pretrained-classifier feature taps.

Forward hooks on the residual stages capture each selected hierarchy level's
raw feature grid (before any aggregation). Models run in eval mode under
no_grad, so extraction is deterministic for fixed weights.
"""

import logging

import numpy as np
import torch
from torchvision import models

from .errors import ExportInputError, WeightsUnavailableError

log = logging.getLogger(__name__)

BACKBONES = {
    "resnet18": (models.resnet18, "ResNet18_Weights"),
    "resnet50": (models.resnet50, "ResNet50_Weights"),
    "wide_resnet50_2": (models.wide_resnet50_2, "Wide_ResNet50_2_Weights"),
}

VALID_LEVELS = (1, 2, 3)

# ImageNet normalization used by all three backbones
_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)


class FeatureTap:
    """Backbone wrapper that records layer1..layer3 outputs per forward pass."""

    def __init__(self, backbone: str, pretrained: bool = True, seed: int = 0):
        if backbone not in BACKBONES:
            raise ExportInputError(f"unknown backbone {backbone!r}; choose from {sorted(BACKBONES)}")
        ctor, weights_attr = BACKBONES[backbone]
        torch.manual_seed(seed)
        if pretrained:
            try:
                weights = getattr(models, weights_attr).IMAGENET1K_V1
                self.model = ctor(weights=weights)
            except Exception as exc:  # download/cache failure
                raise WeightsUnavailableError(
                    f"cannot load pretrained weights for {backbone}: {exc}"
                ) from exc
        else:
            self.model = ctor(weights=None)
        self.model.eval()
        self.backbone = backbone

        self._captured = {}
        for level in VALID_LEVELS:
            stage = getattr(self.model, f"layer{level}")
            stage.register_forward_hook(self._make_hook(level))

    def _make_hook(self, level):
        def hook(_module, _inputs, output):
            self._captured[level] = output.detach()

        return hook

    def extract(self, image: torch.Tensor, levels) -> list:
        """Raw (C, H, W) float32 grids for each selected level, input order 1<2<3."""
        levels = sorted(set(int(x) for x in levels))
        if not levels or any(x not in VALID_LEVELS for x in levels):
            raise ExportInputError(f"levels must be a non-empty subset of {VALID_LEVELS}, got {levels}")
        if image.ndim != 3 or image.shape[0] != 3:
            raise ExportInputError(f"expected a (3, H, W) image tensor, got {tuple(image.shape)}")

        self._captured.clear()
        with torch.no_grad():
            self.model(image.unsqueeze(0))
        out = []
        for level in levels:
            grid = self._captured[level][0].to(torch.float32).cpu().numpy()
            log.info("%s layer%d -> %s", self.backbone, level, grid.shape)
            out.append(grid)
        return out


def to_model_tensor(rgb: np.ndarray) -> torch.Tensor:
    """HxWx3 uint8 -> normalized (3, H, W) float tensor."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ExportInputError(f"expected HxWx3 uint8, got {rgb.shape} {rgb.dtype}")
    t = torch.from_numpy(rgb.copy()).permute(2, 0, 1).float() / 255.0
    return (t - _MEAN) / _STD
