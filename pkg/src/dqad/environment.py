"""Self-designed training environment.

Keeps a small pool of labeled anomalous features (from one anomalous image)
and a capped pool of normal features (from a rotating subset of normal
images). Next states come either from the anomalous pool (exploitation) or
from an embedding-space neighbor search over the normal pool (exploration):
the nearest neighbor after an anomalous call, the farthest after a normal one.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, StateError
from .features import LabeledFeature

ACTION_NORMAL = 0
ACTION_ANOMALOUS = 1

# reward(action, gt): positive only for correctly flagged anomalies, the
# harshest penalty for false alarms on normal data.
_REWARDS = {
    (ACTION_ANOMALOUS, 1): 1,
    (ACTION_NORMAL, 1): -1,
    (ACTION_ANOMALOUS, 0): -2,
    (ACTION_NORMAL, 0): 0,
}


def reward(action, gt) -> int:
    if action not in (ACTION_NORMAL, ACTION_ANOMALOUS):
        raise InputError(f"action must be 0 or 1, got {action}")
    if gt not in (0, 1):
        raise InputError(f"ground truth must be 0 or 1, got {gt}")
    return _REWARDS[(action, gt)]


def euclidean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass
class EnvConfig:
    exploit_prob: float = 0.5       # probability of drawing from the anomalous pool
    n_sample_images: int = 80       # normal images pooled per resample
    pool_cap: int = 100_000         # max normal features kept after a resample
    bs_enabled: bool = False
    bank_size: int = 1_000
    boundary_k: int = 1_000
    exclude_self: bool = False      # forbid the neighbor search from returning s_t itself

    def validate(self):
        if not 0.0 <= self.exploit_prob <= 1.0:
            raise ConfigError(f"exploit_prob must be in [0,1], got {self.exploit_prob}")
        if min(self.n_sample_images, self.pool_cap, self.bank_size, self.boundary_k) < 1:
            raise ConfigError("pool sizes must be positive")


@dataclass
class FeaturePools:
    """Current anomalous/normal feature subsets plus cached normal embeddings."""

    anomalous: np.ndarray                    # (Na, C)
    normal: np.ndarray                       # (Nu, C)
    normal_embeddings: np.ndarray = None     # (Nu, E) or None when stale
    embed_version: int = 0


class BoundaryBank:
    """Fixed-size bank of anomalous features, filled in encounter order."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigError("bank capacity must be positive")
        self.capacity = capacity
        self._rows = []

    def __len__(self):
        return len(self._rows)

    def add_from(self, features):
        for row in np.asarray(features):
            if len(self._rows) >= self.capacity:
                break
            self._rows.append(np.array(row, dtype=np.float32))

    def matrix(self):
        if not self._rows:
            raise StateError("boundary bank is empty")
        return np.stack(self._rows)


@dataclass
class TrainingData:
    """Train-split images grouped by kind, the shape resample_pools consumes."""

    normal: list = field(default_factory=list)
    anomalous: list = field(default_factory=list)

    @classmethod
    def from_dataset(cls, dataset, split="train"):
        normal = [img for _, img in dataset.select(split=split, kind="normal")]
        anomalous = [img for _, img in dataset.select(split=split, kind="anomalous")]
        return cls(normal=normal, anomalous=anomalous)

    @property
    def feature_dim(self):
        for img in self.normal + self.anomalous:
            return img.channels
        raise ConfigError("training data is empty")


def exploit_anomalous(pools: FeaturePools, rng) -> LabeledFeature:
    """Uniform draw from the anomalous pool; label is 1 by construction."""
    if pools.anomalous is None or len(pools.anomalous) == 0:
        raise StateError("anomalous pool is empty")
    i = int(rng.integers(0, len(pools.anomalous)))
    return LabeledFeature(pools.anomalous[i].copy(), 1)


def explore_normal(state_vector, action, pools: FeaturePools, net, exclude_self=False) -> LabeledFeature:
    """Neighbor search over the normal pool in the network's embedding space.

    After an anomalous call (a1) returns the nearest normal feature — the
    agent is pulled toward hard boundary points; after a normal call (a0) the
    farthest — pushing exploration to unlearned regions. Ties go to the
    lowest pool index. Pool embeddings come from the cache; the query state is
    embedded fresh.
    """
    if pools.normal is None or len(pools.normal) == 0:
        raise StateError("normal pool is empty")
    if pools.normal_embeddings is None or len(pools.normal_embeddings) != len(pools.normal):
        raise StateError("normal-pool embeddings are stale; call refresh_embeddings first")
    if action not in (ACTION_NORMAL, ACTION_ANOMALOUS):
        raise InputError(f"action must be 0 or 1, got {action}")

    query = net.embed(np.asarray(state_vector))
    dists = np.sqrt(((pools.normal_embeddings.astype(np.float64) - query.astype(np.float64)) ** 2).sum(axis=1))

    if exclude_self:
        same = np.all(pools.normal == np.asarray(state_vector, dtype=pools.normal.dtype), axis=1)
        if same.all():
            raise StateError("normal pool holds only the current state and self-draws are excluded")
        dists = dists.copy()
        dists[same] = np.inf if action == ACTION_ANOMALOUS else -np.inf

    i = int(np.argmin(dists)) if action == ACTION_ANOMALOUS else int(np.argmax(dists))
    return LabeledFeature(pools.normal[i].copy(), 0)


def next_state(state_vector, action, pools, net, cfg: EnvConfig, rng) -> LabeledFeature:
    """Exploit with probability cfg.exploit_prob, otherwise explore."""
    if rng.random() < cfg.exploit_prob:
        return exploit_anomalous(pools, rng)
    return explore_normal(state_vector, action, pools, net, cfg.exclude_self)


def select_boundary_normals(bank: BoundaryBank, normal_features, net, k):
    """The k normal features closest (min over bank) to any banked anomalous
    feature, ordered by distance then original index."""
    if len(bank) == 0:
        raise StateError("boundary selection requires a non-empty bank")
    normal_features = np.asarray(normal_features)
    if k > len(normal_features):
        raise InputError(f"k={k} exceeds candidate count {len(normal_features)}")

    bank_emb = net.embed_batch(bank.matrix()).astype(np.float64)
    min_dist = np.empty(len(normal_features), dtype=np.float64)
    chunk = 4096
    for start in range(0, len(normal_features), chunk):
        block = normal_features[start : start + chunk]
        emb = net.embed_batch(block).astype(np.float64)
        # (n_block, n_bank) pairwise distances
        d2 = ((emb[:, None, :] - bank_emb[None, :, :]) ** 2).sum(axis=2)
        min_dist[start : start + len(block)] = np.sqrt(d2.min(axis=1))

    order = np.argsort(min_dist, kind="stable")[:k]
    return normal_features[order]


def resample_pools(data: TrainingData, cfg: EnvConfig, bank, rng, net=None) -> FeaturePools:
    """Rebuild both pools: anomalous features of one random anomalous image,
    plus normal features pooled from n_sample_images random normal images,
    downsampled uniformly to pool_cap. Boundary-near normals are appended
    before capping when the bank strategy is on. Embeddings start stale.
    """
    cfg.validate()
    if not data.anomalous:
        raise ConfigError("semi-supervised training requires at least one anomalous image")
    if not data.normal:
        raise ConfigError("training requires at least one normal image")

    img = data.anomalous[int(rng.integers(0, len(data.anomalous)))]
    flat = img.feature_matrix()
    anom = flat[img.label_vector() == 1]
    if len(anom) == 0:
        raise ConfigError("selected anomalous image has no positive mask pixels")

    n_img = min(cfg.n_sample_images, len(data.normal))
    chosen = rng.choice(len(data.normal), size=n_img, replace=False)
    normal = np.concatenate([data.normal[int(i)].feature_matrix() for i in chosen], axis=0)

    if cfg.bs_enabled:
        if net is None:
            raise ConfigError("boundary selection needs the live network for embeddings")
        bank.add_from(anom)
        k = min(cfg.boundary_k, len(normal))
        normal = np.concatenate([normal, select_boundary_normals(bank, normal, net, k)], axis=0)

    if len(normal) > cfg.pool_cap:
        keep = np.sort(rng.choice(len(normal), size=cfg.pool_cap, replace=False))
        normal = normal[keep]

    return FeaturePools(
        anomalous=np.ascontiguousarray(anom, dtype=np.float32),
        normal=np.ascontiguousarray(normal, dtype=np.float32),
        normal_embeddings=None,
        embed_version=0,
    )


def refresh_embeddings(pools: FeaturePools, net):
    """Re-embed the whole normal pool with the current network."""
    pools.normal_embeddings = net.embed_batch(pools.normal)
    pools.embed_version += 1
