"""Dense and LSTM layers with hand-written gradients, dropout, MSE and Adam.

Everything runs in float64 on numpy arrays with a leading batch axis. Each
forward op checks its output and raises :class:`NonFinite` as soon as a NaN
or Inf appears.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import BadProbability, DimensionMismatch, NonFinite

ACTIVATIONS = ("identity", "tanh")


def check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFinite(f"non-finite values in {where}")
    return arr


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Dense:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionMismatch(f"W {self.W.shape} and b {self.b.shape} disagree")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> list[np.ndarray]:
        return [self.W, self.b]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, activation="identity") -> Dense:
        return cls(glorot_uniform(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out), activation)


def dense_forward(p: Dense, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != p.n_in:
        raise DimensionMismatch(f"input width {x.shape[-1]} != layer input {p.n_in}")
    z = x @ p.W.T + p.b
    y = np.tanh(z) if p.activation == "tanh" else z
    return check_finite(y, "dense_forward")


def dense_backward(p: Dense, x: np.ndarray, y: np.ndarray, dy: np.ndarray):
    """Gradients ``(dW, db, dx)`` given the forward input ``x`` and output ``y``."""
    if dy.shape != y.shape:
        raise DimensionMismatch(f"upstream gradient {dy.shape} != output {y.shape}")
    dz = dy * (1.0 - y * y) if p.activation == "tanh" else dy
    dz2 = dz.reshape(-1, p.n_out)
    dW = dz2.T @ x.reshape(-1, p.n_in)
    db = dz2.sum(axis=0)
    dx = dz @ p.W
    return dW, db, dx


GATES = ("input", "forget", "output", "candidate")


@dataclass
class LstmCell:
    """Stacked gate weights ``W`` of shape ``(in + hidden, 4 * hidden)``.

    Column blocks are the input, forget, output and candidate gates, in that
    order; rows are ``[x_t; h_prev]``.
    """

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.W.shape[1] % 4 or self.b.shape != (self.W.shape[1],):
            raise DimensionMismatch(f"inconsistent LSTM weights W {self.W.shape}, b {self.b.shape}")
        if self.W.shape[0] <= self.n_hidden:
            raise DimensionMismatch("LSTM weight rows must cover input and hidden state")

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1] // 4

    @property
    def n_in(self) -> int:
        return self.W.shape[0] - self.n_hidden

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """One gate's ``(hidden, in + hidden)`` weight matrix and bias."""
        k, h = GATES.index(name), self.n_hidden
        return self.W[:, k * h : (k + 1) * h].T, self.b[k * h : (k + 1) * h]

    def parameters(self) -> list[np.ndarray]:
        return [self.W, self.b]

    @classmethod
    def init(cls, n_in: int, n_hidden: int, rng: np.random.Generator, forget_bias: float = 1.0) -> LstmCell:
        W = np.concatenate(
            [glorot_uniform(rng, (n_in + n_hidden, n_hidden), n_in + n_hidden, n_hidden) for _ in GATES],
            axis=1,
        )
        b = np.zeros(4 * n_hidden)
        b[n_hidden : 2 * n_hidden] = forget_bias
        return cls(W, b)


def _gates(z: np.ndarray, h: int):
    i = expit(z[..., :h])
    f = expit(z[..., h : 2 * h])
    o = expit(z[..., 2 * h : 3 * h])
    g = np.tanh(z[..., 3 * h :])
    return i, f, o, g


def lstm_step(p: LstmCell, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One time step; returns ``(h_t, c_t)``."""
    if x_t.shape[-1] != p.n_in or h_prev.shape[-1] != p.n_hidden or c_prev.shape != h_prev.shape:
        raise DimensionMismatch(
            f"lstm_step got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} for cell {p.n_in}->{p.n_hidden}"
        )
    z = x_t @ p.W[: p.n_in] + h_prev @ p.W[p.n_in :] + p.b
    i, f, o, g = _gates(z, p.n_hidden)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    check_finite(h, "lstm_step")
    return h, c


@dataclass
class LstmCache:
    x: np.ndarray
    h: np.ndarray  # (B, T + 1, H), h[:, 0] is the initial state
    c: np.ndarray  # (B, T + 1, H)
    tanh_c: np.ndarray
    gates: np.ndarray  # (B, T, 4H) post-activation


def lstm_forward(p: LstmCell, x: np.ndarray, h0=None, c0=None):
    """Run a cell over ``x`` of shape ``(B, T, in)``; returns ``(h_seq, cache)``."""
    if x.ndim != 3 or x.shape[-1] != p.n_in:
        raise DimensionMismatch(f"expected (B, T, {p.n_in}) input, got {x.shape}")
    B, T, _ = x.shape
    H = p.n_hidden
    h = np.zeros((B, T + 1, H))
    c = np.zeros((B, T + 1, H))
    if h0 is not None:
        h[:, 0] = h0
    if c0 is not None:
        c[:, 0] = c0
    gates = np.empty((B, T, 4 * H))
    tanh_c = np.empty((B, T, H))
    xw = x @ p.W[: p.n_in] + p.b
    Wh = p.W[p.n_in :]
    for t in range(T):
        z = xw[:, t] + h[:, t] @ Wh
        i, f, o, g = _gates(z, H)
        gates[:, t] = np.concatenate([i, f, o, g], axis=-1)
        c[:, t + 1] = f * c[:, t] + i * g
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = o * tanh_c[:, t]
    check_finite(h, "lstm_forward")
    return h[:, 1:], LstmCache(x, h, c, tanh_c, gates)


def lstm_backward(p: LstmCell, cache: LstmCache, dh_seq: np.ndarray, dh_last=None, dc_last=None):
    """Backpropagation through time.

    ``dh_seq`` is the loss gradient with respect to every emitted hidden
    state. Returns ``(dW, db, dx, dh0, dc0)``.
    """
    B, T, _ = cache.x.shape
    H = p.n_hidden
    if dh_seq.shape != (B, T, H):
        raise DimensionMismatch(f"dh_seq {dh_seq.shape} != {(B, T, H)}")
    Wh = p.W[p.n_in :]
    dz = np.empty((B, T, 4 * H))
    dW_h = np.zeros_like(Wh)
    dh_next = np.zeros((B, H)) if dh_last is None else dh_last.copy()
    dc_next = np.zeros((B, H)) if dc_last is None else dc_last.copy()
    for t in reversed(range(T)):
        i = cache.gates[:, t, :H]
        f = cache.gates[:, t, H : 2 * H]
        o = cache.gates[:, t, 2 * H : 3 * H]
        g = cache.gates[:, t, 3 * H :]
        tc = cache.tanh_c[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz_t = dz[:, t]
        dz_t[:, :H] = dc * g * i * (1.0 - i)
        dz_t[:, H : 2 * H] = dc * cache.c[:, t] * f * (1.0 - f)
        dz_t[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz_t[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dW_h += cache.h[:, t].T @ dz_t
        dh_next = dz_t @ Wh.T
    dz2 = dz.reshape(B * T, 4 * H)
    dW_x = cache.x.reshape(B * T, -1).T @ dz2
    db = dz2.sum(axis=0)
    dx = dz @ p.W[: p.n_in].T
    return np.concatenate([dW_x, dW_h], axis=0), db, dx, dh_next, dc_next


def dropout_mask(shape, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: ``1 / keep_prob`` for kept units, else 0."""
    if not 0.0 < keep_prob <= 1.0:
        raise BadProbability(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape)
    return (rng.random(shape) < keep_prob) / keep_prob


def dropout(x: np.ndarray, keep_prob: float, rng: np.random.Generator | None = None, training: bool = True) -> np.ndarray:
    if not 0.0 < keep_prob <= 1.0:
        raise BadProbability(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    return x * dropout_mask(x.shape, keep_prob, rng)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise DimensionMismatch(f"pred {pred.shape} != target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NonFinite("non-finite loss")
    return loss, 2.0 * diff / diff.size


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kwargs)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatch("params, grads and optimizer state differ in length")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionMismatch(f"param {p.shape} vs grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
