"""Torch-side feature aggregation with the engine's exact semantics:
neighborhood mean over the valid window, corner-aligned bilinear upscale,
channel concat in input order, then contiguous segment-mean reduction.
"""

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ExportInputError


def patch_mean(grid: torch.Tensor, p: int) -> torch.Tensor:
    """(C, H, W) -> same shape; mean over the valid p x p window (p odd)."""
    if p < 1 or p % 2 == 0:
        raise ExportInputError(f"patch size must be odd and positive, got {p}")
    if p == 1:
        return grid
    return F.avg_pool2d(
        grid.unsqueeze(0), kernel_size=p, stride=1, padding=p // 2, count_include_pad=False
    ).squeeze(0)


def upscale(grid: torch.Tensor, target) -> torch.Tensor:
    th, tw = target
    if th < grid.shape[1] or tw < grid.shape[2]:
        raise ExportInputError(f"target {target} smaller than source {tuple(grid.shape[1:])}")
    return F.interpolate(
        grid.unsqueeze(0), size=(th, tw), mode="bilinear", align_corners=True
    ).squeeze(0)


def reduce_channels(grid: torch.Tensor, c_target: int) -> torch.Tensor:
    total = grid.shape[0]
    if not 1 <= c_target <= total:
        raise ExportInputError(f"target channels {c_target} outside [1, {total}]")
    segments = torch.tensor_split(grid, c_target, dim=0)
    return torch.stack([s.mean(dim=0) for s in segments], dim=0)


def aggregate(layer_grids, p, target, c_target) -> np.ndarray:
    """Full pipeline over raw (C, H, W) grids; returns (H0, W0, C) float32."""
    if not layer_grids:
        raise ExportInputError("need at least one layer grid")
    tensors = [torch.as_tensor(np.asarray(g), dtype=torch.float32) for g in layer_grids]
    scaled = [upscale(patch_mean(t, p), target) for t in tensors]
    stacked = torch.cat(scaled, dim=0)
    reduced = reduce_channels(stacked, c_target)
    return reduced.permute(1, 2, 0).contiguous().numpy().astype(np.float32)
