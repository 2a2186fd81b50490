"""Stateful layers that cache their forward inputs for a single backward pass."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from . import functional as F


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_out, fan_in))


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def manifest(self) -> dict:
        return {"kind": self.kind, "params": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()]}


class SequenceInput(Layer):
    """Entry point of a sequence network; only validates (B, T, dim)."""

    kind = "sequence_input"

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.dim:
            raise ShapeMismatch(f"expected (batch, T, {self.dim}) input, got {x.shape}")
        return x

    def backward(self, dy):
        return dy


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    kind = "fc"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        w = glorot_uniform(rng, n_out, n_in) if rng is not None else np.zeros((n_out, n_in))
        self.params = {"weight": w, "bias": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return F.fc_forward(F.FCParams(self.params["weight"], self.params["bias"]), x)

    def backward(self, dy):
        dW, db, dx = F.fc_backward(F.FCParams(self.params["weight"], self.params["bias"]), self._x, dy)
        self.grads["weight"] += dW
        self.grads["bias"] += db
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._x = x
        return F.relu_forward(x)

    def backward(self, dy):
        return F.relu_backward(self._x, dy)


class LSTM(Layer):
    """LSTM over (B, T, in); emits the last hidden state (B, H) unless
    ``return_sequences`` is set, in which case (B, T, H)."""

    kind = "lstm"

    def __init__(
        self,
        n_in: int,
        hidden: int,
        rng: np.random.Generator | None = None,
        return_sequences: bool = False,
        forget_bias: float = 1.0,
    ):
        super().__init__()
        self.n_in, self.hidden, self.return_sequences = n_in, hidden, return_sequences
        p = F.LSTMParams.zeros(n_in, hidden)
        if rng is not None:
            for k in range(4):
                s = slice(k * hidden, (k + 1) * hidden)
                p.W[s] = glorot_uniform(rng, hidden, n_in)
                p.U[s] = glorot_uniform(rng, hidden, hidden)
            p.b[hidden : 2 * hidden] = forget_bias
        self.params = {"W": p.W, "U": p.U, "b": p.b}
        self.zero_grad()

    @property
    def lstm_params(self) -> F.LSTMParams:
        return F.LSTMParams(self.params["W"], self.params["U"], self.params["b"])

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeMismatch(f"LSTM expects (batch, T, in), got {x.shape}")
        hs, self._cache = F.lstm_sequence_forward(self.lstm_params, x.transpose(1, 0, 2))
        self._T = x.shape[1]
        return hs.transpose(1, 0, 2) if self.return_sequences else hs[-1]

    def backward(self, dy):
        if self.return_sequences:
            dhs = dy.transpose(1, 0, 2)
        else:
            dhs = np.zeros((self._T,) + dy.shape)
            dhs[-1] = dy
        g, dxs, _, _ = F.bptt_backward(self.lstm_params, self._cache, dhs)
        self.grads["W"] += g.W
        self.grads["U"] += g.U
        self.grads["b"] += g.b
        return dxs.transpose(1, 0, 2)


class RegressionOutput(Layer):
    """Terminal marker; the half-MSE loss itself is applied by :class:`Sequential`."""

    kind = "regression"

    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


class Sequential:
    """Chain of layers mapping a batch to one scalar per sample."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x.reshape(x.shape[0])

    def backward(self, dpred: np.ndarray) -> np.ndarray:
        dy = dpred.reshape(-1, 1)
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed ``"<layer index>.<name>"``."""
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": layer.grads[k] for i, layer in enumerate(self.layers) for k in layer.params}

    def loss(self, x, y) -> float:
        return F.half_mse_loss(self.forward(x), y)

    def loss_and_grads(self, x, y) -> tuple[float, dict[str, np.ndarray]]:
        self.zero_grad()
        pred = self.forward(x)
        loss = F.half_mse_loss(pred, y)
        self.backward(F.half_mse_backward(pred, y))
        return loss, self.gradients()

    def manifest(self) -> list[dict]:
        return [layer.manifest() for layer in self.layers]
