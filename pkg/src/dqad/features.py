"""Locally-aware patch feature maps and the dataset file format.

A per-layer feature grid is smoothed over a local neighborhood, upscaled to a
common resolution, concatenated across layers and reduced to a target channel
count. Each position of the result is one training state; the pixel-aligned
mask supplies its ground-truth label.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, InputError, ParseError

FEATURE_MAGIC = b"DQADFMAP"
FEATURE_VERSION = 1
_HEADER = "<8sHIII"  # magic, version, H, W, C
_HEADER_SIZE = 22

KIND_NORMAL = "normal"
KIND_ANOMALOUS = "anomalous"
SPLITS = ("train", "val", "test")


@dataclass
class LabeledFeature:
    """One feature vector together with its {0,1} ground-truth label."""

    vector: np.ndarray
    gt: int

    def __post_init__(self):
        if self.gt not in (0, 1):
            raise InputError(f"ground truth must be 0 or 1, got {self.gt}")


class LayerFeatureMap:
    """A single backbone layer's feature grid, stored channels-first (C, H, W)."""

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim != 3:
            raise InputError(f"layer feature map must be (C, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError("layer feature map contains non-finite values")
        self.data = data

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


class AggregatedFeatureMap:
    """Per-image grid of C-dimensional features plus the aligned binary mask.

    Feature data is kept as float32 (H, W, C); the mask is uint8 (H, W) so a
    file round-trip is bit exact.
    """

    def __init__(self, data, mask=None):
        data = np.ascontiguousarray(np.asarray(data), dtype=np.float32)
        if data.ndim != 3:
            raise InputError(f"feature map must be (H, W, C), got shape {data.shape}")
        h, w = data.shape[:2]
        if mask is None:
            mask = np.zeros((h, w), dtype=np.uint8)
        mask = np.ascontiguousarray(np.asarray(mask), dtype=np.uint8)
        if mask.shape != (h, w):
            raise InputError(f"mask shape {mask.shape} does not match feature grid {(h, w)}")
        if not np.isin(mask, (0, 1)).all():
            raise InputError("mask values must be 0 or 1")
        self.data = data
        self.mask = mask

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def feature_matrix(self):
        """All position vectors as a (H*W, C) array, row-major."""
        return self.data.reshape(-1, self.channels)

    def label_vector(self):
        """Ground-truth labels aligned with :meth:`feature_matrix`."""
        return self.mask.reshape(-1).astype(np.int64)


def patch_aggregate(m: LayerFeatureMap, p: int) -> LayerFeatureMap:
    """Mean-pool every position over its p x p neighborhood (p odd).

    Edge positions average over the valid intersection of the window with the
    grid, so no padding values are invented.
    """
    if p < 1 or p % 2 == 0:
        raise InputError(f"patch size must be an odd positive integer, got {p}")
    if p > max(m.height, m.width):
        raise InputError(f"patch size {p} exceeds grid dimensions {(m.height, m.width)}")
    if p == 1:
        return LayerFeatureMap(m.data.copy())

    c, h, w = m.data.shape
    half = p // 2
    integral = np.zeros((c, h + 1, w + 1), dtype=np.float64)
    integral[:, 1:, 1:] = np.cumsum(np.cumsum(m.data, axis=1, dtype=np.float64), axis=2)

    r0 = np.clip(np.arange(h) - half, 0, None)
    r1 = np.minimum(np.arange(h) + half + 1, h)
    c0 = np.clip(np.arange(w) - half, 0, None)
    c1 = np.minimum(np.arange(w) + half + 1, w)

    sums = (
        integral[:, r1][:, :, c1]
        - integral[:, r0][:, :, c1]
        - integral[:, r1][:, :, c0]
        + integral[:, r0][:, :, c0]
    )
    counts = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return LayerFeatureMap((sums / counts).astype(m.data.dtype))


def _axis_coords(src: int, dst: int):
    # Corner-aligned source coordinates for each destination index.
    if src == 1 or dst == 1:
        zeros = np.zeros(dst, dtype=np.int64)
        return zeros, zeros, np.zeros(dst, dtype=np.float64)
    pos = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), src - 2)
    return lo, lo + 1, pos - lo


def upscale_bilinear(m: LayerFeatureMap, target: tuple) -> LayerFeatureMap:
    """Channelwise corner-aligned bilinear interpolation up to `target` (H, W)."""
    th, tw = target
    if th < m.height or tw < m.width:
        raise InputError(f"target {target} smaller than source {(m.height, m.width)}")
    y0, y1, fy = _axis_coords(m.height, th)
    x0, x1, fx = _axis_coords(m.width, tw)

    d = m.data.astype(np.float64)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    top = d[:, y0][:, :, x0] * (1.0 - fx) + d[:, y0][:, :, x1] * fx
    bottom = d[:, y1][:, :, x0] * (1.0 - fx) + d[:, y1][:, :, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    return LayerFeatureMap(out.astype(m.data.dtype))


def _segment_bounds(total: int, parts: int):
    # Contiguous segments as equal as possible, larger ones first
    # (same split points as np.array_split).
    base, extra = divmod(total, parts)
    sizes = [base + 1] * extra + [base] * (parts - extra)
    bounds = np.cumsum([0] + sizes)
    return list(zip(bounds[:-1], bounds[1:]))


def concat_project(maps, target, c_target, mask=None) -> AggregatedFeatureMap:
    """Upscale all layer maps to `target`, concatenate channels in input order,
    then reduce each position vector to `c_target` dims by segment-mean pooling.
    """
    if not maps:
        raise InputError("need at least one layer feature map")
    total = sum(m.channels for m in maps)
    if not 1 <= c_target <= total:
        raise InputError(f"target channels {c_target} outside [1, {total}]")

    stacked = np.concatenate(
        [upscale_bilinear(m, target).data.astype(np.float64) for m in maps], axis=0
    )
    reduced = np.stack(
        [stacked[a:b].mean(axis=0) for a, b in _segment_bounds(total, c_target)], axis=-1
    )
    return AggregatedFeatureMap(reduced, mask)


def states_from_map(f: AggregatedFeatureMap):
    """Row-major enumeration of (feature vector, label) states, length H*W."""
    vectors = f.feature_matrix()
    labels = f.label_vector()
    return [LabeledFeature(vectors[i].copy(), int(labels[i])) for i in range(len(labels))]


# ---------------------------------------------------------------------------
# Dataset container and manifest


@dataclass
class DatasetEntry:
    path: str
    kind: str
    split: str
    H: int
    W: int
    C: int

    def __post_init__(self):
        if self.kind not in (KIND_NORMAL, KIND_ANOMALOUS):
            raise DataError(f"unknown image kind {self.kind!r}")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def to_json(self):
        return {
            "version": 1,
            "entries": [
                {"path": e.path, "kind": e.kind, "split": e.split, "H": e.H, "W": e.W, "C": e.C}
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, obj):
        try:
            entries = [
                DatasetEntry(e["path"], e["kind"], e["split"], int(e["H"]), int(e["W"]), int(e["C"]))
                for e in obj["entries"]
            ]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        return cls(entries)


@dataclass
class Dataset:
    """In-memory dataset: one feature map per manifest entry, same order."""

    images: list
    manifest: DatasetManifest

    def __post_init__(self):
        if len(self.images) != len(self.manifest.entries):
            raise DataError("manifest entry count does not match image count")

    def select(self, split=None, kind=None):
        """(entry, image) pairs filtered by split and/or kind."""
        out = []
        for entry, image in zip(self.manifest.entries, self.images):
            if split is not None and entry.split != split:
                continue
            if kind is not None and entry.kind != kind:
                continue
            out.append((entry, image))
        return out

    def count(self, split=None, kind=None):
        return len(self.select(split, kind))


# ---------------------------------------------------------------------------
# Synthetic desk-scale datasets


@dataclass
class SynthSpec:
    """Recipe for a separable-Gaussian synthetic dataset.

    Normal positions draw every channel from N(mu_normal, sigma^2); anomalous
    images redraw one random blob_size x blob_size square from
    N(mu_anomaly, sigma^2) and mark it in the mask.
    """

    n_normal: int = 200
    n_anomalous: int = 10
    H: int = 16
    W: int = 16
    C: int = 8
    mu_normal: float = 0.0
    mu_anomaly: float = 2.0
    sigma: float = 1.0
    blob_size: int = 4
    seed: int = 0
    n_normal_test: int = 40
    n_anomalous_test: int = 20

    def validate(self):
        if self.blob_size < 1 or self.blob_size >= min(self.H, self.W):
            raise ConfigError(f"blob_size {self.blob_size} must be in [1, min(H, W))")
        if self.n_anomalous < 1:
            raise ConfigError("need at least one anomalous training image")
        if min(self.n_normal, self.H, self.W, self.C) < 1:
            raise ConfigError("counts and dimensions must be positive")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**obj)


def _synth_image(spec, rng, anomalous):
    data = rng.normal(spec.mu_normal, spec.sigma, size=(spec.H, spec.W, spec.C))
    mask = np.zeros((spec.H, spec.W), dtype=np.uint8)
    if anomalous:
        r = int(rng.integers(0, spec.H - spec.blob_size + 1))
        c = int(rng.integers(0, spec.W - spec.blob_size + 1))
        block = rng.normal(spec.mu_anomaly, spec.sigma, size=(spec.blob_size, spec.blob_size, spec.C))
        data[r : r + spec.blob_size, c : c + spec.blob_size] = block
        mask[r : r + spec.blob_size, c : c + spec.blob_size] = 1
    return AggregatedFeatureMap(data, mask)


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministically generate train and test splits from `spec.seed`."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    groups = [
        ("train", KIND_NORMAL, spec.n_normal, False),
        ("train", KIND_ANOMALOUS, spec.n_anomalous, True),
        ("test", KIND_NORMAL, spec.n_normal_test, False),
        ("test", KIND_ANOMALOUS, spec.n_anomalous_test, True),
    ]
    images, entries = [], []
    for split, kind, count, anomalous in groups:
        for i in range(count):
            img = _synth_image(spec, rng, anomalous)
            images.append(img)
            entries.append(
                DatasetEntry(f"{split}_{kind}_{i:04d}.dqadfmap", kind, split, spec.H, spec.W, spec.C)
            )
    return Dataset(images, DatasetManifest(entries))


# ---------------------------------------------------------------------------
# Binary file format


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_feature_map(path, fmap: AggregatedFeatureMap):
    import struct

    header = struct.pack(
        _HEADER, FEATURE_MAGIC, FEATURE_VERSION, fmap.height, fmap.width, fmap.channels
    )
    payload = header + fmap.data.astype("<f4").tobytes(order="C") + fmap.mask.tobytes(order="C")
    _atomic_write(path, payload)


def read_feature_map(path) -> AggregatedFeatureMap:
    import struct

    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc

    if len(raw) < _HEADER_SIZE:
        raise ParseError(path, len(raw), "truncated header")
    magic, version, h, w, c = struct.unpack(_HEADER, raw[:_HEADER_SIZE])
    if magic != FEATURE_MAGIC:
        raise ParseError(path, 0, f"bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise ParseError(path, 8, f"unsupported version {version}")
    n_feat = h * w * c * 4
    expected = _HEADER_SIZE + n_feat + h * w
    if len(raw) != expected:
        raise ParseError(path, min(len(raw), expected), f"expected {expected} bytes, found {len(raw)}")

    data = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=_HEADER_SIZE).reshape(h, w, c)
    mask = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=_HEADER_SIZE + n_feat).reshape(h, w)
    if not np.isin(mask, (0, 1)).all():
        raise ParseError(path, _HEADER_SIZE + n_feat, "mask bytes outside {0, 1}")
    return AggregatedFeatureMap(data.copy(), mask.copy())


def write_dataset(dataset: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    for entry, image in zip(dataset.manifest.entries, dataset.images):
        write_feature_map(os.path.join(directory, entry.path), image)
    manifest_bytes = json.dumps(dataset.manifest.to_json(), indent=2).encode()
    _atomic_write(os.path.join(directory, "manifest.json"), manifest_bytes)


def read_manifest(directory) -> DatasetManifest:
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    return DatasetManifest.from_json(obj)


def read_dataset(directory) -> Dataset:
    """Load a dataset directory; validates every file against the manifest."""
    manifest = read_manifest(directory)
    images = []
    for entry in manifest.entries:
        path = os.path.join(directory, entry.path)
        if not os.path.exists(path):
            raise DataError(f"manifest references missing file: {path}")
        fmap = read_feature_map(path)
        if (fmap.height, fmap.width, fmap.channels) != (entry.H, entry.W, entry.C):
            raise DataError(
                f"{path}: header dims {(fmap.height, fmap.width, fmap.channels)} "
                f"disagree with manifest {(entry.H, entry.W, entry.C)}"
            )
        if entry.kind == KIND_ANOMALOUS and int(fmap.mask.sum()) == 0:
            raise DataError(f"{path}: anomalous image has an empty mask")
        images.append(fmap)
    return Dataset(images, manifest)


# ---------------------------------------------------------------------------
# Optional per-channel standardization (off by default)


def channel_stats(images):
    """Per-channel mean and std pooled over a list of feature maps."""
    stacked = np.concatenate([img.feature_matrix() for img in images], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return mean.astype(np.float32), std.astype(np.float32)


def standardize_image(image, mean, std):
    return AggregatedFeatureMap((image.data - mean) / std, image.mask)
