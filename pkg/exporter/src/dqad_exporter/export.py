"""Export pipeline: real images -> backbone features -> aggregated maps ->
engine-readable dataset directory.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .aggregate import aggregate
from .backbones import BACKBONES, FeatureTap, to_model_tensor
from .errors import ExportError, ExportSpecError
from .formats import write_feature_file, write_manifest
from .rpag import make_pseudo_anomaly

log = logging.getLogger(__name__)


@dataclass
class InputImage:
    path: str
    kind: str  # normal | anomalous
    split: str = "train"
    mask: str = None  # required for anomalous inputs

    def validate(self):
        if self.kind not in ("normal", "anomalous"):
            raise ExportSpecError(f"unknown image kind {self.kind!r}")
        if self.kind == "anomalous" and not self.mask:
            raise ExportSpecError(f"anomalous input {self.path} needs a mask")


@dataclass
class ExportSpec:
    backbone: str = "wide_resnet50_2"
    levels: tuple = (2, 3)
    patch_size: int = 3
    target_h: int = 256
    target_w: int = 256
    target_c: int = 64
    image_size: int = 256
    pretrained: bool = True
    rpag_enabled: bool = False
    augment_count: int = 1
    seed: int = 0
    images: list = field(default_factory=list)

    def validate(self):
        if self.backbone not in BACKBONES:
            raise ExportSpecError(f"unknown backbone {self.backbone!r}")
        if not self.levels:
            raise ExportSpecError("select at least one hierarchy level")
        if not self.images:
            raise ExportSpecError("no input images listed")
        if min(self.target_h, self.target_w, self.target_c, self.image_size) < 1:
            raise ExportSpecError("target dims and image_size must be positive")
        if self.augment_count < 0:
            raise ExportSpecError("augment_count must be >= 0")
        for img in self.images:
            img.validate()

    @classmethod
    def from_json_file(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ExportSpecError(f"cannot read spec {path}: {exc}") from exc

        target = obj.pop("target", {})
        images = [InputImage(**entry) for entry in obj.pop("images", [])]
        known = {f for f in cls.__dataclass_fields__} - {"images"}
        unknown = set(obj) - known
        if unknown:
            raise ExportSpecError(f"unknown spec keys: {sorted(unknown)}")
        spec = cls(images=images, **obj)
        spec.target_h = int(target.get("H", spec.target_h))
        spec.target_w = int(target.get("W", spec.target_w))
        spec.target_c = int(target.get("C", spec.target_c))
        spec.levels = tuple(int(x) for x in spec.levels)
        return spec


def load_rgb(path, size) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB").resize((size, size), Image.BILINEAR))


def load_mask(path, size, target) -> np.ndarray:
    with Image.open(path) as img:
        at_image = img.convert("L").resize((size, size), Image.NEAREST)
        th, tw = target
        at_target = at_image.resize((tw, th), Image.NEAREST)
    return (np.asarray(at_target) > 127).astype(np.uint8)


class Exporter:
    def __init__(self, spec: ExportSpec):
        spec.validate()
        self.spec = spec
        self.tap = FeatureTap(spec.backbone, pretrained=spec.pretrained, seed=spec.seed)
        self.rng = np.random.default_rng(spec.seed)

    def features_for(self, rgb: np.ndarray) -> np.ndarray:
        grids = self.tap.extract(to_model_tensor(rgb), self.spec.levels)
        return aggregate(
            grids, self.spec.patch_size, (self.spec.target_h, self.spec.target_w), self.spec.target_c
        )

    def run(self, out_dir, base_dir="."):
        spec = self.spec
        os.makedirs(out_dir, exist_ok=True)
        target = (spec.target_h, spec.target_w)
        entries = []
        rgb_cache = {}

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base_dir, p)

        def emit(name, rgb, mask, kind, split):
            feats = self.features_for(rgb)
            write_feature_file(os.path.join(out_dir, name), feats, mask)
            entries.append(
                {"path": name, "kind": kind, "split": split,
                 "H": spec.target_h, "W": spec.target_w, "C": spec.target_c}
            )

        for i, img in enumerate(spec.images):
            try:
                rgb = load_rgb(resolve(img.path), spec.image_size)
                rgb_cache[i] = rgb
                if img.kind == "anomalous":
                    mask = load_mask(resolve(img.mask), spec.image_size, target)
                else:
                    mask = np.zeros(target, dtype=np.uint8)
                emit(f"img_{i:04d}.dqadfmap", rgb, mask, img.kind, img.split)
            except ExportError:
                raise
            except Exception as exc:
                raise ExportError(f"failed exporting {img.path}: {exc}") from exc

        if spec.rpag_enabled:
            self._emit_pseudo(entries, rgb_cache, out_dir, target, resolve)

        write_manifest(out_dir, entries)
        log.info("exported %d files to %s", len(entries), out_dir)
        return entries

    def _emit_pseudo(self, entries, rgb_cache, out_dir, target, resolve):
        spec = self.spec
        normal_ids = [i for i, img in enumerate(spec.images) if img.kind == "normal"]
        anomalous_ids = [i for i, img in enumerate(spec.images) if img.kind == "anomalous"]
        if not normal_ids or not anomalous_ids:
            return
        counter = 0
        for ai in anomalous_ids:
            src = spec.images[ai]
            # mask at image resolution drives the paste
            full_mask = load_mask(resolve(src.mask), spec.image_size, (spec.image_size, spec.image_size))
            if full_mask.sum() == 0:
                continue
            for _ in range(spec.augment_count):
                ni = normal_ids[int(self.rng.integers(0, len(normal_ids)))]
                pseudo_rgb, pseudo_mask = make_pseudo_anomaly(
                    rgb_cache[ai], full_mask, rgb_cache[ni], self.rng
                )
                if pseudo_mask.sum() == 0:
                    continue  # region transformed out of frame: nothing to label
                small = np.asarray(
                    Image.fromarray(pseudo_mask * 255).resize((target[1], target[0]), Image.NEAREST)
                )
                small = (small > 127).astype(np.uint8)
                if small.sum() == 0:
                    continue
                feats = self.features_for(pseudo_rgb)
                name = f"pseudo_{counter:04d}.dqadfmap"
                write_feature_file(os.path.join(out_dir, name), feats, small)
                entries.append(
                    {"path": name, "kind": "anomalous", "split": "train",
                     "H": spec.target_h, "W": spec.target_w, "C": spec.target_c}
                )
                counter += 1


def export(spec: ExportSpec, out_dir, base_dir="."):
    """Run the whole pipeline; returns the manifest entries written."""
    return Exporter(spec).run(out_dir, base_dir)
