"""Forward/backward primitives on float64 numpy arrays.

Batched inputs put the batch on the leading axis. The LSTM uses the
standard forget-gate cell without peepholes; the four gates are stacked
in the order input, forget, output, candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch

GATES = ("i", "f", "o", "g")


def ensure_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class FCParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")


def fc_forward(params: FCParams, x: np.ndarray) -> np.ndarray:
    """y = W x + b on the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weight.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != {params.weight.shape[1]}")
    return x @ params.weight.T + params.bias


def fc_backward(params: FCParams, x: np.ndarray, dy: np.ndarray):
    """Returns (dW, db, dx) for upstream gradient ``dy``."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    if dy2.shape[1] != params.weight.shape[0] or dy2.shape[0] != x2.shape[0]:
        raise ShapeMismatch(f"gradient shape {dy.shape} does not match output of input {x.shape}")
    dW = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = (dy2 @ params.weight).reshape(x.shape)
    return dW, db, dx


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return dy * (x > 0)


@dataclass
class LSTMParams:
    """Gate weights stacked row-wise as [i; f; o; g].

    W: (4H, in), U: (4H, H), b: (4H,)
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        H4 = self.W.shape[0]
        if H4 % 4 or self.U.shape != (H4, H4 // 4) or self.b.shape != (H4,):
            raise ShapeMismatch(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W_k, U_k, b_k) views for gate ``name`` in ``GATES``."""
        k, H = GATES.index(name), self.hidden
        s = slice(k * H, (k + 1) * H)
        return self.W[s], self.U[s], self.b[s]

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "LSTMParams":
        return cls(np.zeros((4 * hidden, input_dim)), np.zeros((4 * hidden, hidden)), np.zeros(4 * hidden))


def _lstm_gates(params: LSTMParams, x, h_prev):
    H = params.hidden
    z = x @ params.W.T + h_prev @ params.U.T + params.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    return i, f, o, g


def lstm_step(params: LSTMParams, x_t, h_prev, c_prev):
    """One cell update; returns (h_t, c_t)."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != params.input_dim:
        raise ShapeMismatch(f"x width {x_t.shape[-1]} != {params.input_dim}")
    if h_prev.shape[-1] != params.hidden or c_prev.shape != h_prev.shape:
        raise ShapeMismatch("state shapes do not match hidden size")
    i, f, o, g = _lstm_gates(params, x_t, h_prev)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


@dataclass
class LSTMCache:
    xs: np.ndarray  # (T, B, in)
    hs: np.ndarray  # (T+1, B, H), hs[0] = h0
    cs: np.ndarray  # (T+1, B, H)
    gates: np.ndarray  # (T, 4, B, H)


def lstm_sequence_forward(params: LSTMParams, xs, h0=None, c0=None):
    """Run the cell over ``xs`` of shape (T, B, in) or (T, in).

    Returns (hs, cache) where hs has shape (T, B, H) (or (T, H)).
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim not in (2, 3) or xs.shape[0] < 1:
        raise ShapeMismatch("need a nonempty (T, [B,] in) sequence")
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[:, None, :]
    T, B, _ = xs.shape
    if xs.shape[2] != params.input_dim:
        raise ShapeMismatch(f"x width {xs.shape[2]} != {params.input_dim}")
    H = params.hidden
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    if h0 is not None:
        hs[0] = np.broadcast_to(h0, (B, H))
    if c0 is not None:
        cs[0] = np.broadcast_to(c0, (B, H))
    gates = np.empty((T, 4, B, H))
    for t in range(T):
        i, f, o, g = _lstm_gates(params, xs[t], hs[t])
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = (i, f, o, g)
    out = hs[1:]
    cache = LSTMCache(xs, hs, cs, gates)
    return (out[:, 0, :] if squeeze else out), cache


def bptt_backward(params: LSTMParams, cache: LSTMCache, dhs):
    """Full backpropagation through time.

    ``dhs`` is the loss gradient w.r.t. every output h_t, shaped like the
    forward output. Returns (grads, dxs, dh0, dc0) with ``grads`` an
    :class:`LSTMParams` holding dW, dU, db.
    """
    dhs = np.asarray(dhs, dtype=np.float64)
    squeeze = dhs.ndim == 2
    if squeeze:
        dhs = dhs[:, None, :]
    T, B, H = dhs.shape
    if cache.xs.shape[:2] != (T, B) or H != params.hidden:
        raise ShapeMismatch("gradient does not match the cached forward pass")
    dW = np.zeros_like(params.W)
    dU = np.zeros_like(params.U)
    db = np.zeros_like(params.b)
    dxs = np.empty_like(cache.xs)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in reversed(range(T)):
        i, f, o, g = cache.gates[t]
        c, c_prev, h_prev = cache.cs[t + 1], cache.cs[t], cache.hs[t]
        tc = np.tanh(c)
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dW += dz.T @ cache.xs[t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dxs[t] = dz @ params.W
        dh_next = dz @ params.U
        dc_next = dc * f
    if squeeze:
        return LSTMParams(dW, dU, db), dxs[:, 0, :], dh_next[0], dc_next[0]
    return LSTMParams(dW, dU, db), dxs, dh_next, dc_next


def half_mse_loss(pred, target) -> float:
    """(1 / 2N) * sum((pred - target)^2)."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size < 1:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    r = pred - target
    return float(np.dot(r.ravel(), r.ravel()) / (2 * r.size))


def half_mse_backward(pred, target) -> np.ndarray:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size < 1:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    return (pred - target) / pred.size
