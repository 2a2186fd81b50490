"""The three acceleration predictors and the early-stopping training loop.

All predictors share ``predict(window)`` / ``predict_batch(windows)`` taking
physical-unit windows of shape (T, 5) / (N, T, 5) and returning the SV's
next-frame acceleration in m/s^2.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .dataset import DEFAULT_WINDOW, N_FEATURES, DatasetSplit, NormalizationStats
from .errors import (
    CheckpointError,
    ConfigInvalid,
    DegenerateHorizon,
    EmptyDataset,
    NonFiniteLoss,
    UntrainedModel,
    WrongWindowLength,
)
from .nn import checkpoint

logger = logging.getLogger(__name__)

LSTM_LAYERS = ("input", "fc", "relu", "lstm", "fc", "relu", "fc_out", "regression")
EVAL_CHUNK = 512


@dataclass(frozen=True)
class LstmNetConfig:
    input_dim: int = N_FEATURES
    hidden: int = 200
    layers: tuple[str, ...] = LSTM_LAYERS
    window_length: int = DEFAULT_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers or self.layers[0] != "input":
            raise ConfigInvalid("first layer must be the sequence input")
        if "lstm" not in self.layers:
            raise ConfigInvalid("network needs an lstm layer")
        body = [k for k in self.layers if k != "regression"]
        if body[-1] != "fc_out":
            raise ConfigInvalid("last weighted layer must be the scalar fc_out")
        unknown = set(self.layers) - {"input", "fc", "relu", "lstm", "fc_out", "regression"}
        if unknown:
            raise ConfigInvalid(f"unknown layer kinds {sorted(unknown)}")


@dataclass(frozen=True)
class AnnConfig:
    input_dim: int = N_FEATURES
    window_length: int = DEFAULT_WINDOW
    hidden_layers: int = 5
    width: int = 200

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1:
            raise ConfigInvalid("ANN needs at least one hidden layer of positive width")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 25
    headway: float = 1.5
    w_gap: float = 1.0
    w_rel_v: float = 0.5
    w_accel: float = 0.1
    a_min: float = -4.0
    a_max: float = 2.0
    dt: float = 0.04

    def __post_init__(self):
        if min(self.w_gap, self.w_rel_v, self.w_accel) < 0:
            raise ConfigInvalid("MPC weights must be nonnegative")
        if not self.a_min < 0 < self.a_max:
            raise ConfigInvalid("MPC bounds must satisfy a_min < 0 < a_max")
        if not self.dt > 0:
            raise ConfigInvalid("dt must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    patience: int = 5
    max_epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    min_delta: float = 1e-9

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigInvalid("patience must be >= 1")
        if not self.lr > 0:
            raise ConfigInvalid("learning rate must be positive")
        if self.max_epochs < 1:
            raise ConfigInvalid("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")


# --- neural predictors -------------------------------------------------------


class NeuralPredictor:
    kind = "neural"

    def __init__(self, config, seed: int | None = 0, stats: NormalizationStats | None = None):
        self.config = config
        self.seed = seed
        self.stats = stats
        self.net = self._build(np.random.default_rng(seed) if seed is not None else None)
        self.initialized = seed is not None

    def _build(self, rng) -> nn.Sequential:
        raise NotImplementedError

    @property
    def window_length(self) -> int:
        return self.config.window_length

    def parameters(self) -> dict[str, np.ndarray]:
        return self.net.parameters()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.parameters().items():
            v[...] = snap[k]

    def forward_normalized(self, X: np.ndarray) -> np.ndarray:
        """Predictions in normalized target units for normalized inputs (N, T, 5)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != self.window_length:
            raise WrongWindowLength(f"expected windows of length {self.window_length}, got shape {X.shape}")
        out = [self.net.forward(X[i : i + EVAL_CHUNK]) for i in range(0, len(X), EVAL_CHUNK)]
        return np.concatenate(out) if out else np.zeros(0)

    def _ready(self) -> NormalizationStats:
        if not self.initialized or self.stats is None:
            raise UntrainedModel(f"{self.kind} model has no initialized parameters or normalization stats")
        return self.stats

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        stats = self._ready()
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[1] != self.window_length:
            raise WrongWindowLength(f"expected windows of length {self.window_length}, got shape {windows.shape}")
        return stats.denormalize_target(self.forward_normalized(stats.normalize_inputs(windows)))

    def predict(self, window: np.ndarray) -> float:
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 2 or window.shape[0] != self.window_length:
            raise WrongWindowLength(f"expected a ({self.window_length}, 5) window, got {window.shape}")
        return float(self.predict_batch(window[None])[0])

    # checkpoints
    def to_bytes(self) -> bytes:
        extra = {"seed": self.seed, "stats": self.stats.to_dict() if self.stats is not None else None}
        params = list(self.parameters().values())
        return checkpoint.dumps(self.kind, self.net.manifest(), params, _config_dict(self.config), extra)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def load_arrays(self, blob: bytes) -> None:
        header, arrays = checkpoint.loads(blob, expect_kind=self.kind, expect_manifest=self.net.manifest())
        for dst, src in zip(self.parameters().values(), arrays):
            dst[...] = src
        stats = header["extra"].get("stats")
        self.stats = NormalizationStats.from_dict(stats) if stats else None
        self.initialized = True


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


class LstmPredictor(NeuralPredictor):
    """Sequence input, per-frame FC + ReLU, LSTM, FC + ReLU, scalar FC, regression."""

    kind = "lstm"

    def _build(self, rng):
        cfg: LstmNetConfig = self.config
        layers, width, seq = [], cfg.input_dim, True
        for k in cfg.layers:
            if k == "input":
                layers.append(nn.SequenceInput(cfg.input_dim))
            elif k == "fc":
                layers.append(nn.Dense(width, cfg.hidden, rng))
                width = cfg.hidden
            elif k == "relu":
                layers.append(nn.ReLU())
            elif k == "lstm":
                if not seq:
                    raise ConfigInvalid("only one lstm layer is supported")
                layers.append(nn.LSTM(width, cfg.hidden, rng))
                width, seq = cfg.hidden, False
            elif k == "fc_out":
                layers.append(nn.Dense(width, 1, rng))
                width = 1
            elif k == "regression":
                layers.append(nn.RegressionOutput())
        return nn.Sequential(layers)


class AnnPredictor(NeuralPredictor):
    """Feed-forward net on the flattened window."""

    kind = "ann"

    def _build(self, rng):
        cfg: AnnConfig = self.config
        layers: list = [nn.SequenceInput(cfg.input_dim), nn.Flatten()]
        width = cfg.input_dim * cfg.window_length
        for _ in range(cfg.hidden_layers):
            layers += [nn.Dense(width, cfg.width, rng), nn.ReLU()]
            width = cfg.width
        layers += [nn.Dense(width, 1, rng), nn.RegressionOutput()]
        return nn.Sequential(layers)


def load_model(path: str | Path) -> NeuralPredictor:
    """Rebuild an LSTM or ANN predictor from a checkpoint file."""
    blob = Path(path).read_bytes()
    header, _ = checkpoint.loads(blob)
    cfg = header["config"]
    if header["kind"] == "lstm":
        model = LstmPredictor(LstmNetConfig(**{**cfg, "layers": tuple(cfg["layers"])}), seed=None)
    elif header["kind"] == "ann":
        model = AnnPredictor(AnnConfig(**cfg), seed=None)
    else:
        raise CheckpointError(f"unknown model kind {header['kind']!r}")
    model.seed = header["extra"].get("seed")
    model.load_arrays(blob)
    return model


# --- MPC baseline ------------------------------------------------------------


def mpc_predict(state, cfg: MpcConfig) -> float:
    """Constant-acceleration LQ controller on the last frame's state.

    ``state`` is a FeatureRow or a sequence (x_sv, x_pv, v_sv, v_pv, ...).
    The cost over k = 1..H of w_gap (g_k - tau v_k)^2 + w_rel_v (v_k - v_pv)^2
    + w_accel a^2 is quadratic in a, so the minimizer is closed-form; it is
    then clamped to [a_min, a_max].
    """
    if cfg.horizon < 1:
        raise DegenerateHorizon("prediction horizon must be >= 1")
    if hasattr(state, "inputs"):
        state = state.inputs
    x_sv, x_pv, v_sv, v_pv = (float(v) for v in state[:4])
    return float(_mpc_batch(np.array([x_pv - x_sv]), np.array([v_sv]), np.array([v_pv]), cfg)[0])


def mpc_coefficients(cfg: MpcConfig):
    """Per-step sensitivities of the gap error (q) and speed (s) to the control."""
    k = np.arange(1, cfg.horizon + 1, dtype=np.float64)
    q = cfg.dt**2 * k * (k + 1) / 2 + cfg.headway * k * cfg.dt
    s = k * cfg.dt
    return k, q, s


def _mpc_batch(gap, v_sv, v_pv, cfg: MpcConfig) -> np.ndarray:
    if cfg.horizon < 1:
        raise DegenerateHorizon("prediction horizon must be >= 1")
    k, q, s = mpc_coefficients(cfg)
    p = (gap - cfg.headway * v_sv)[:, None] + k * cfg.dt * (v_pv - v_sv)[:, None]
    r = (v_sv - v_pv)[:, None]
    num = np.sum(cfg.w_gap * p * q - cfg.w_rel_v * r * s, axis=1)
    den = np.sum(cfg.w_gap * q * q + cfg.w_rel_v * s * s) + cfg.horizon * cfg.w_accel
    if den == 0:
        return np.zeros_like(gap)
    return np.clip(num / den, cfg.a_min, cfg.a_max)


class MpcPredictor:
    kind = "mpc"

    def __init__(self, config: MpcConfig | None = None, window_length: int | None = None):
        self.config = config or MpcConfig()
        self.window_length = window_length

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or (self.window_length is not None and windows.shape[1] != self.window_length):
            raise WrongWindowLength(f"unexpected window shape {windows.shape}")
        last = windows[:, -1, :]
        return _mpc_batch(last[:, 1] - last[:, 0], last[:, 2], last[:, 3], self.config)

    def predict(self, window: np.ndarray) -> float:
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 2:
            raise WrongWindowLength(f"expected a (T, 5) window, got {window.shape}")
        return float(self.predict_batch(window[None])[0])


def predict(model, window: np.ndarray) -> float:
    return model.predict(window)


# --- training ----------------------------------------------------------------


@dataclass
class TrainTrace:
    epochs: list[int] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)  # cumulative mini-batches at epoch end
    iteration_rmse: list[float] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    @property
    def best_val_rmse(self) -> float:
        return min(self.val_rmse) if self.val_rmse else math.inf

    def to_csv(self, model: str | None = None) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        prefix = ["model"] if model is not None else []
        w.writerow(prefix + ["epoch", "iterations", "train_rmse", "val_rmse"])
        for e, it, tr, va in zip(self.epochs, self.iterations, self.train_rmse, self.val_rmse):
            w.writerow(([model] if model is not None else []) + [e, it, repr(tr), repr(va)])
        return out.getvalue()


class EarlyStopping:
    """Tracks the best validation score; signals a stop after ``patience``
    consecutive epochs that fail to improve it by more than ``min_delta``."""

    def __init__(self, patience: int = 5, min_delta: float = 1e-9):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.best_state = None
        self.wait = 0

    def update(self, epoch: int, value: float, state=None) -> bool:
        if value < self.best - self.min_delta:
            self.best, self.best_epoch, self.best_state, self.wait = value, epoch, state, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def rmse_normalized(model: NeuralPredictor, X: np.ndarray, y: np.ndarray) -> float:
    r = model.forward_normalized(X) - y
    return float(np.sqrt(np.mean(r * r)))


def train(
    model: NeuralPredictor,
    split: DatasetSplit,
    cfg: TrainConfig,
    val_metric: Callable[[NeuralPredictor], float] | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[NeuralPredictor, TrainTrace]:
    """Mini-batch Adam on half-MSE in normalized units with early stopping.

    The model is updated in place and ends holding the parameters of the
    epoch with the lowest validation RMSE. ``val_metric`` replaces the
    default validation RMSE on ``split.test``.

    Raises:
        EmptyDataset: either side of the split is empty.
        NonFiniteLoss: a mini-batch loss became NaN or infinite.
    """
    X, y = split.arrays("train")
    Xv, yv = split.arrays("test")
    if len(X) == 0 or len(Xv) == 0:
        raise EmptyDataset("training needs nonempty train and test sides")
    if X.shape[1] != model.window_length:
        raise WrongWindowLength(f"dataset windows have length {X.shape[1]}, model expects {model.window_length}")
    model.stats = split.stats
    model.initialized = True
    if val_metric is None:
        val_metric = lambda m: rmse_normalized(m, Xv, yv)  # noqa: E731

    rng = np.random.default_rng(cfg.seed)
    opt = nn.Adam(lr=cfg.lr)
    params = model.parameters()
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    trace = TrainTrace()
    n_iter = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(X))
        sq_sum, loss_sum, n_batches = 0.0, 0.0, 0
        for start in range(0, len(X), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = model.net.loss_and_grads(X[idx], y[idx])
            if not math.isfinite(loss):
                trace.stop_reason = "non_finite"
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, iteration {n_iter + 1}")
            nn.clip_by_global_norm(grads, cfg.clip_norm)
            opt.step(params, grads)
            n_iter += 1
            n_batches += 1
            loss_sum += loss
            sq_sum += 2 * loss * len(idx)
            trace.iteration_rmse.append(math.sqrt(2 * loss))
        val = float(val_metric(model))
        trace.epochs.append(epoch)
        trace.iterations.append(n_iter)
        trace.train_rmse.append(math.sqrt(sq_sum / len(X)))
        trace.train_loss.append(loss_sum / n_batches)
        trace.val_rmse.append(val)
        if on_epoch is not None:
            on_epoch(epoch, trace.train_rmse[-1], val)
        logger.info("epoch %d train_rmse=%.6f val_rmse=%.6f", epoch, trace.train_rmse[-1], val)
        if stopper.update(epoch, val, model.snapshot() if val < stopper.best - stopper.min_delta else None):
            trace.stop_reason = "patience"
            break
    else:
        trace.stop_reason = "max_epochs"
    trace.best_epoch = stopper.best_epoch
    if stopper.best_state is not None:
        model.restore(stopper.best_state)
    return model, trace
