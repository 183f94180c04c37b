"""End-to-end training loop.

Episodes start from a uniform draw over the normal pool and run a fixed step
count. Each step: epsilon-greedy action on the current state, reward from the
state's label, environment draw of the next state, replay push, and - once
warmup has filled the buffer - one minibatch gradient step. The target
network syncs every `target_sync_every` steps and both pools are rebuilt
every `resample_every` steps (embeddings refresh on both events).

Everything draws from a single seeded generator in a fixed order (network
init, initial resample, then per step: action, next state, minibatch), so a
(seed, config, dataset) triple reproduces the run bit for bit.
"""

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .environment import (
    BoundaryBank,
    EnvConfig,
    TrainingData,
    next_state,
    refresh_embeddings,
    resample_pools,
    reward,
)
from .errors import ConfigError, InputError
from .features import Dataset, LabeledFeature
from .qnet import QNetwork, RMSProp, loss_and_grads
from .replay import MODE_PRIORITIZED, MODE_UNIFORM, ReplayBuffer, Transition


@dataclass
class TrainConfig:
    total_steps: int = 40_000
    warmup_steps: int = 2_000
    steps_per_episode: int = 2_000
    target_sync_every: int = 5_000
    resample_every: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 1_000
    gamma: float = 0.99
    batch_size: int = 32
    buffer_capacity: int = 10_000
    hidden_sizes: tuple = (256, 128)
    learning_rate: float = 1e-3
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-8
    huber_delta: float = None
    per_enabled: bool = False
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_epsilon: float = 0.01
    bs_enabled: bool = False
    exploit_prob: float = 0.5
    n_sample_images: int = 80
    pool_cap: int = 100_000
    bank_size: int = 1_000
    boundary_k: int = 1_000
    exclude_self: bool = False
    standardize: bool = False
    seed: int = 0

    def validate(self):
        counts = (
            self.total_steps,
            self.steps_per_episode,
            self.target_sync_every,
            self.resample_every,
            self.eps_decay_steps,
            self.batch_size,
            self.buffer_capacity,
        )
        if min(counts) < 1 or self.warmup_steps < 0:
            raise ConfigError("step counts and sizes must be positive")
        if self.warmup_steps > self.total_steps:
            raise ConfigError("warmup_steps must not exceed total_steps")
        if self.eps_end > self.eps_start or not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if not self.hidden_sizes:
            raise ConfigError("need at least one hidden layer (embedding space)")
        self.env_config().validate()

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            exploit_prob=self.exploit_prob,
            n_sample_images=self.n_sample_images,
            pool_cap=self.pool_cap,
            bs_enabled=self.bs_enabled,
            bank_size=self.bank_size,
            boundary_k=self.boundary_k,
            exclude_self=self.exclude_self,
        )

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        if cfg.hidden_sizes is not None:
            cfg.hidden_sizes = tuple(int(h) for h in cfg.hidden_sizes)
        return cfg

    def to_json(self):
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["hidden_sizes"] = list(self.hidden_sizes)
        return doc


@dataclass
class StepRecord:
    step: int
    epsilon: float
    action: int
    reward: int
    loss: float  # None during warmup
    gt: int      # label of the acted-on state; kept in memory, not serialized


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    n_updates: int = 0
    n_syncs: int = 0
    n_resamples: int = 0

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "step": r.step,
                        "epsilon": r.epsilon,
                        "action": r.action,
                        "reward": r.reward,
                        "loss": r.loss,
                    }
                )
            )
        return "\n".join(lines) + "\n"


def epsilon_at(step, cfg: TrainConfig) -> float:
    """Linear decay from eps_start to eps_end over eps_decay_steps, then flat."""
    if step < 0:
        raise InputError("step must be >= 0")
    if step >= cfg.eps_decay_steps:
        return cfg.eps_end
    frac = step / cfg.eps_decay_steps
    return cfg.eps_start * (1.0 - frac) + cfg.eps_end * frac


def select_action(net, state_vector, epsilon, rng) -> int:
    """Epsilon-greedy over the two actions; argmax ties resolve to 'normal'."""
    if not 0.0 <= epsilon <= 1.0:
        raise InputError(f"epsilon must be in [0,1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(0, 2))
    return int(np.argmax(net.forward(state_vector)))


def _episode_start(pools, rng) -> LabeledFeature:
    i = int(rng.integers(0, len(pools.normal)))
    return LabeledFeature(pools.normal[i].copy(), 0)


def train(data, cfg: TrainConfig, eval_fn=None, eval_every=0):
    """Run the full loop; returns (net, optimizer, RunLog)."""
    cfg.validate()
    if isinstance(data, Dataset):
        data = TrainingData.from_dataset(data, split="train")
    if not data.anomalous or not data.normal:
        raise ConfigError("training needs at least one anomalous and one normal image")

    rng = np.random.default_rng(cfg.seed)
    net = QNetwork.create(data.feature_dim, cfg.hidden_sizes, rng)
    target = net.clone()
    opt = RMSProp(net, cfg.learning_rate, cfg.rms_decay, cfg.rms_epsilon)
    buf = ReplayBuffer(cfg.buffer_capacity, cfg.per_alpha, cfg.per_beta_start, cfg.per_epsilon)
    bank = BoundaryBank(cfg.bank_size)
    env_cfg = cfg.env_config()
    mode = MODE_PRIORITIZED if cfg.per_enabled else MODE_UNIFORM

    pools = resample_pools(data, env_cfg, bank, rng, net=net)
    refresh_embeddings(pools, net)

    log = RunLog()
    step = 0
    while step < cfg.total_steps:
        state = _episode_start(pools, rng)
        for _ in range(cfg.steps_per_episode):
            if step >= cfg.total_steps:
                break
            eps = epsilon_at(step, cfg)
            action = select_action(net, state.vector, eps, rng)
            r = reward(action, state.gt)
            nxt = next_state(state.vector, action, pools, net, env_cfg, rng)
            buf.push(Transition(state.vector, action, r, nxt.vector))

            loss_val = None
            if step >= cfg.warmup_steps:
                if cfg.per_enabled:
                    progress = step / max(1, cfg.total_steps - 1)
                    buf.beta_is = cfg.per_beta_start + (1.0 - cfg.per_beta_start) * progress
                ids, batch, is_w = buf.sample(cfg.batch_size, mode, rng)
                loss_val, grads, td_errors = loss_and_grads(
                    net, target, batch, cfg.gamma, is_w, cfg.huber_delta
                )
                opt.step(net, grads)
                if cfg.per_enabled:
                    buf.update_priorities(ids, td_errors)
                log.n_updates += 1

            log.records.append(StepRecord(step, eps, action, r, loss_val, state.gt))
            step += 1

            if step % cfg.target_sync_every == 0:
                target = net.clone()
                refresh_embeddings(pools, net)
                log.n_syncs += 1
            if step % cfg.resample_every == 0:
                pools = resample_pools(data, env_cfg, bank, rng, net=net)
                refresh_embeddings(pools, net)
                log.n_resamples += 1
            if eval_every and eval_fn is not None and step % eval_every == 0:
                log.snapshots.append(eval_fn(net, step))

            state = nxt

    return net, opt, log
