"""Prediction metrics, the model comparison report and the closed-loop cut-in simulation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .dataset import DatasetSplit, D_AT_CUT_IN
from .detector import CutInEvent
from .errors import (
    DegenerateRange,
    EmptyInput,
    LengthMismatch,
    WindowUnderflow,
)
from .ingest import Recording


class Predictor(Protocol):
    def predict(self, window: np.ndarray) -> float: ...

    def predict_batch(self, windows: np.ndarray) -> np.ndarray: ...


def _pair(measured, predicted) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(measured, dtype=np.float64).ravel()
    yh = np.asarray(predicted, dtype=np.float64).ravel()
    if y.size != yh.size:
        raise LengthMismatch(f"{y.size} measured vs {yh.size} predicted values")
    if y.size == 0:
        raise EmptyInput("metrics need at least one value")
    return y, yh


def mean(measured) -> float:
    y = np.asarray(measured, dtype=np.float64).ravel()
    if y.size == 0:
        raise EmptyInput("mean of an empty vector")
    return float(np.sum(y) / y.size)


def rmse(measured, predicted) -> float:
    """sqrt(sum((y - y_hat)^2) / N)."""
    y, yh = _pair(measured, predicted)
    r = y - yh
    return float(np.sqrt(np.dot(r, r) / y.size))


def accuracy_pct(measured, predicted) -> float:
    """100 * max(0, 1 - RMSE / (max(y) - min(y))): RMSE as a share of the measured range."""
    y, yh = _pair(measured, predicted)
    span = float(y.max() - y.min())
    if not span > 0:
        raise DegenerateRange("measured values have zero range")
    return 100.0 * max(0.0, 1.0 - rmse(y, yh) / span)


@dataclass
class ModelScore:
    model: str
    rmse: float
    accuracy: float
    n: int
    predicted: np.ndarray = field(repr=False)


@dataclass
class EvalReport:
    scores: dict[str, ModelScore]
    measured: np.ndarray = field(repr=False)
    measured_mean: float = 0.0
    trace_ref: str | None = None

    def metrics_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["model", "rmse", "accuracy", "n"])
        for name, s in self.scores.items():
            w.writerow([name, repr(s.rmse), repr(s.accuracy), s.n])
        return out.getvalue()

    def residuals_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        names = list(self.scores)
        w.writerow(["index", "measured"] + [f"pred_{n}" for n in names] + [f"resid_{n}" for n in names])
        for i, y in enumerate(self.measured):
            preds = [self.scores[n].predicted[i] for n in names]
            w.writerow([i, repr(float(y))] + [repr(float(p)) for p in preds] + [repr(float(y - p)) for p in preds])
        return out.getvalue()


def evaluate_models(models: Mapping[str, Predictor], split: DatasetSplit, side: str = "test") -> EvalReport:
    """Score every model on one side of ``split`` in physical units."""
    X, y = split.physical(side)
    if len(y) == 0:
        raise EmptyInput(f"{side} side is empty")
    scores = {}
    for name, model in models.items():
        pred = np.asarray(model.predict_batch(X), dtype=np.float64)
        scores[name] = ModelScore(name, rmse(y, pred), accuracy_pct(y, pred), len(y), pred)
    return EvalReport(scores, y, mean(y))


# --- closed-loop simulation --------------------------------------------------


@dataclass
class PvPlayback:
    """Recorded preceding-vehicle motion plus the SV's recorded warm-up history."""

    pv_x: np.ndarray
    pv_v: np.ndarray
    sv_x: np.ndarray  # warm-up frames only
    sv_v: np.ndarray
    sv_a: np.ndarray
    sv_length: float
    d_anchor: float  # PV position at the cut-in frame
    cut_in_index: int  # index of the cut-in frame within pv_x


def playback_from_event(event: CutInEvent, recording: Recording, warmup: int) -> PvPlayback:
    """PV trajectory over the event's +/-40 frames and the first ``warmup`` SV frames."""
    sv = recording.tracks[event.sv_track_id]
    pv = recording.tracks[event.pv_track_id]
    lo, hi = event.window
    p = slice(pv.index(lo), pv.index(hi) + 1)
    s = slice(sv.index(lo), sv.index(lo) + warmup)
    return PvPlayback(
        pv_x=pv.x[p].copy(),
        pv_v=pv.x_velocity[p].copy(),
        sv_x=sv.x[s].copy(),
        sv_v=sv.x_velocity[s].copy(),
        sv_a=sv.x_acceleration[s].copy(),
        sv_length=float(sv.width[sv.index(event.cut_in_frame)]),
        d_anchor=float(pv.x[pv.index(event.cut_in_frame)]),
        cut_in_index=event.cut_in_frame - lo,
    )


@dataclass
class SimResult:
    t: np.ndarray
    x_sv: np.ndarray
    v_sv: np.ndarray
    a_sv: np.ndarray  # executed (clamped) acceleration
    a_cmd: np.ndarray  # controller output before clamping
    x_pv: np.ndarray
    v_pv: np.ndarray
    gap: np.ndarray
    min_gap: float
    collision: bool

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "x_sv", "v_sv", "a_sv", "a_cmd", "x_pv", "v_pv", "gap"])
        for row in zip(self.t, self.x_sv, self.v_sv, self.a_sv, self.a_cmd, self.x_pv, self.v_pv, self.gap):
            w.writerow([repr(float(v)) for v in row])
        return out.getvalue()


def simulate_cut_in(
    playback: PvPlayback,
    controller: Predictor,
    dt: float,
    window_length: int,
    a_bounds: tuple[float, float] = (-4.0, 2.0),
    d_mode: str = D_AT_CUT_IN,
) -> SimResult:
    """Replace the recorded SV with ``controller`` and replay the PV.

    The first ``window_length`` frames come from the recorded SV. From then
    on every step asks the controller for an acceleration using the last
    ``window_length`` simulated frames, clamps it, and integrates
    v <- max(v + a dt, 0), x <- x + v dt. Stops at the end of the PV
    playback or at the first step with a non-positive bumper gap.

    Raises:
        WindowUnderflow: fewer recorded SV frames than one input window.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    T = window_length
    if len(playback.sv_x) < T:
        raise WindowUnderflow(f"need {T} recorded SV frames for warm-up, got {len(playback.sv_x)}")
    n = len(playback.pv_x)
    if n < T:
        raise WindowUnderflow("PV playback is shorter than one window")
    a_lo, a_hi = a_bounds
    x = list(playback.sv_x[:T])
    v = list(playback.sv_v[:T])
    a = list(playback.sv_a[:T])
    a_cmd = list(playback.sv_a[:T])
    collision = False
    k = T
    while k < n:
        idx = slice(k - T, k)
        x_pv = playback.pv_x[idx]
        d = (playback.d_anchor if d_mode == D_AT_CUT_IN else x_pv) - np.array(x[-T:])
        window = np.column_stack([x[-T:], x_pv, v[-T:], playback.pv_v[idx], d])
        cmd = float(controller.predict(window))
        acc = min(max(cmd, a_lo), a_hi)
        v_new = max(v[-1] + acc * dt, 0.0)
        x_new = x[-1] + v_new * dt
        x.append(x_new)
        v.append(v_new)
        a.append(acc)
        a_cmd.append(cmd)
        k += 1
        if playback.pv_x[k - 1] - x_new - playback.sv_length <= 0:
            collision = True
            break
    m = len(x)
    x_arr = np.array(x)
    gap = playback.pv_x[:m] - x_arr - playback.sv_length
    return SimResult(
        t=np.arange(m) * dt,
        x_sv=x_arr,
        v_sv=np.array(v),
        a_sv=np.array(a),
        a_cmd=np.array(a_cmd),
        x_pv=playback.pv_x[:m].copy(),
        v_pv=playback.pv_v[:m].copy(),
        gap=gap,
        min_gap=float(gap.min()),
        collision=bool(collision or gap.min() <= 0),
    )
