"""Fully-connected action-value network with hand-written backpropagation.

Hidden layers are rectified, the two-unit output head is linear so TD targets
of any sign are representable; scores are normalized only at evaluation time.
The last hidden layer doubles as the embedding space used for neighbor search.
"""

import struct

import numpy as np

from .errors import ConfigError, InputError, NumericError, ParseError
from .features import _atomic_write

N_ACTIONS = 2

CHECKPOINT_MAGIC = b"DQADCKPT"
CHECKPOINT_VERSION = 1


class QNetwork:
    """MLP mapping a C-dim state to [Q(s, a0), Q(s, a1)].

    weights[l] has shape (layer_sizes[l], layer_sizes[l+1]); biases[l] has
    shape (layer_sizes[l+1],).
    """

    def __init__(self, weights, biases, dtype=np.float32):
        if len(weights) != len(biases) or not weights:
            raise ConfigError("need one bias vector per weight matrix")
        self.dtype = np.dtype(dtype)
        self.weights = [np.ascontiguousarray(w, dtype=self.dtype) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=self.dtype) for b in biases]
        sizes = [self.weights[0].shape[0]]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ConfigError(f"inconsistent layer shapes {w.shape} / {b.shape}")
            if w.shape[0] != sizes[-1]:
                raise ConfigError(f"layer input {w.shape[0]} does not chain from {sizes[-1]}")
            sizes.append(w.shape[1])
        if sizes[-1] != N_ACTIONS:
            raise ConfigError(f"output head must have {N_ACTIONS} units, got {sizes[-1]}")
        self.layer_sizes = sizes
        self._check_finite()

    @classmethod
    def create(cls, input_dim, hidden_sizes, rng, dtype=np.float32):
        """He-initialized network with the given hidden layout."""
        sizes = [int(input_dim), *[int(h) for h in hidden_sizes], N_ACTIONS]
        if min(sizes) < 1:
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, dtype)

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    @property
    def embedding_dim(self):
        if self.n_hidden == 0:
            raise ConfigError("network has no hidden layer; embedding undefined")
        return self.layer_sizes[-2]

    def _check_finite(self):
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError("network parameters contain non-finite values")

    def _as_batch(self, states):
        arr = np.asarray(states, dtype=self.dtype)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.input_dim:
            raise InputError(f"state dim {arr.shape} does not match input size {self.input_dim}")
        if not np.all(np.isfinite(arr)):
            raise InputError("state contains non-finite values")
        return arr, squeeze

    def forward_batch(self, states):
        """Q-values for a (B, C) batch of states, shape (B, 2)."""
        h, _ = self._as_batch(states)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def forward(self, state):
        """[Q(s, a0), Q(s, a1)] for a single state."""
        arr, _ = self._as_batch(state)
        return self.forward_batch(arr)[0]

    def embed_batch(self, states):
        """Final hidden activations for a (B, C) batch, shape (B, E)."""
        if self.n_hidden == 0:
            raise ConfigError("network has no hidden layer; embedding undefined")
        h, _ = self._as_batch(states)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h

    def embed(self, state):
        arr, _ = self._as_batch(state)
        return self.embed_batch(arr)[0]

    def clone(self):
        """Independent bit-identical copy (used for target-network syncs)."""
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dtype)


def sync_target(net: QNetwork) -> QNetwork:
    return net.clone()


def td_target(r, gamma, next_q_target):
    """r + gamma * max(next_q_target)."""
    q = np.asarray(next_q_target, dtype=np.float64)
    if not (np.isfinite(r) and np.isfinite(gamma) and np.all(np.isfinite(q))):
        raise InputError("td_target requires finite inputs")
    return float(r) + float(gamma) * float(q.max())


def loss_and_grads(net, target_net, batch, gamma, is_weights, huber_delta=None):
    """Weighted TD loss over a batch and its exact parameter gradients.

    loss = mean_i w_i * err(delta_i) where delta_i = td_target_i - Q(s_i, a_i)
    and err is the square (default) or the Huber function with knee
    `huber_delta`. Returns (loss, (weight_grads, bias_grads), td_errors);
    the target network receives no gradient.
    """
    if len(batch) == 0:
        raise InputError("empty batch")
    if len(is_weights) != len(batch):
        raise InputError("one importance weight per transition required")
    w = np.asarray(is_weights, dtype=net.dtype)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise InputError("importance weights must be positive and finite")

    states = np.stack([t.state for t in batch]).astype(net.dtype)
    next_states = np.stack([t.next_state for t in batch]).astype(net.dtype)
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=net.dtype)
    n = len(batch)

    # forward pass, caching pre-activations for the backward sweep
    activations = [states]
    pre_acts = []
    h = states
    for wl, bl in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ wl + bl
        pre_acts.append(z)
        h = np.maximum(z, 0.0)
        activations.append(h)
    q = h @ net.weights[-1] + net.biases[-1]

    next_q = target_net.forward_batch(next_states)
    targets = rewards + net.dtype.type(gamma) * next_q.max(axis=1)
    q_taken = q[np.arange(n), actions]
    td_errors = targets - q_taken

    if huber_delta is None:
        loss = float(np.mean(w * td_errors**2))
        dl_dq = -2.0 * w * td_errors / n
    else:
        d = net.dtype.type(huber_delta)
        abs_err = np.abs(td_errors)
        per_sample = np.where(abs_err <= d, 0.5 * td_errors**2, d * (abs_err - 0.5 * d))
        loss = float(np.mean(w * per_sample))
        dl_dq = -w * np.clip(td_errors, -d, d) / n

    dz = np.zeros_like(q)
    dz[np.arange(n), actions] = dl_dq

    n_layers = len(net.weights)
    weight_grads = [None] * n_layers
    bias_grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        weight_grads[l] = activations[l].T @ dz
        bias_grads[l] = dz.sum(axis=0)
        if l > 0:
            dz = (dz @ net.weights[l].T) * (pre_acts[l - 1] > 0)

    return loss, (weight_grads, bias_grads), td_errors.astype(np.float64)


class RMSProp:
    """Root-mean-square gradient scaling with per-parameter accumulators."""

    def __init__(self, net, learning_rate=1e-3, decay=0.99, epsilon=1e-8):
        if learning_rate <= 0 or not 0 < decay < 1 or epsilon <= 0:
            raise ConfigError("need learning_rate > 0, decay in (0,1), epsilon > 0")
        self.learning_rate = float(learning_rate)
        self.decay = float(decay)
        self.epsilon = float(epsilon)
        self.weight_acc = [np.zeros_like(w) for w in net.weights]
        self.bias_acc = [np.zeros_like(b) for b in net.biases]

    def step(self, net, grads):
        """In-place update: acc <- decay*acc + (1-decay)*g^2, p <- p - lr*g/(sqrt(acc)+eps)."""
        weight_grads, bias_grads = grads
        if len(weight_grads) != len(net.weights):
            raise InputError("gradient layer count does not match network")
        params = list(zip(net.weights, self.weight_acc, weight_grads)) + list(
            zip(net.biases, self.bias_acc, bias_grads)
        )
        for param, acc, g in params:
            if g.shape != param.shape:
                raise InputError(f"gradient shape {g.shape} does not match parameter {param.shape}")
            g = g.astype(param.dtype, copy=False)
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            param -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)
        net._check_finite()


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version u16, layer count u32, then per layer
# (rows u32, cols u32, float32-LE row-major weights, float32-LE biases),
# then optimizer accumulators in the same per-layer layout.


def checkpoint_bytes(net: QNetwork, opt: RMSProp) -> bytes:
    def layer_blocks(mats, vecs):
        for w, b in zip(mats, vecs):
            yield struct.pack("<II", w.shape[0], w.shape[1])
            yield np.ascontiguousarray(w, dtype="<f4").tobytes()
            yield np.ascontiguousarray(b, dtype="<f4").tobytes()

    parts = [struct.pack("<8sHI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(net.weights))]
    parts.extend(layer_blocks(net.weights, net.biases))
    parts.extend(layer_blocks(opt.weight_acc, opt.bias_acc))
    return b"".join(parts)


def save_checkpoint(path, net: QNetwork, opt: RMSProp):
    _atomic_write(path, checkpoint_bytes(net, opt))


def load_checkpoint(path):
    """Read a checkpoint; returns (net, opt) with float32 parameters."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read checkpoint: {exc}") from exc

    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(raw):
            raise ParseError(path, off, f"truncated while reading {what}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    magic, version, n_layers = struct.unpack("<8sHI", take(14, "header"))
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(path, 0, f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ParseError(path, 8, f"unsupported version {version}")
    if n_layers == 0:
        raise ParseError(path, 10, "zero layers")

    def read_layers():
        mats, vecs = [], []
        for _ in range(n_layers):
            rows, cols = struct.unpack("<II", take(8, "layer shape"))
            w = np.frombuffer(take(rows * cols * 4, "weights"), dtype="<f4").reshape(rows, cols)
            b = np.frombuffer(take(cols * 4, "biases"), dtype="<f4")
            mats.append(w.copy())
            vecs.append(b.copy())
        return mats, vecs

    weights, biases = read_layers()
    acc_w, acc_b = read_layers()
    if off != len(raw):
        raise ParseError(path, off, f"{len(raw) - off} trailing bytes")

    net = QNetwork(weights, biases, dtype=np.float32)
    opt = RMSProp(net)
    for slot, mat in zip(opt.weight_acc, acc_w):
        np.copyto(slot, mat)
    for slot, vec in zip(opt.bias_acc, acc_b):
        np.copyto(slot, vec)
    return net, opt
