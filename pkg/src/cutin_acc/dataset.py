"""From cut-in events to windowed, normalized regression samples.

Each event contributes the 81 frames around its cut-in frame. Every frame
yields five inputs (SV and PV position and speed plus the distance ``d``
from the SV to where the PV changed lanes) and the SV's acceleration as
target. Windows of ``T`` consecutive frames predict the acceleration of
the frame that follows them.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import EVENT_HALF_WINDOW, CutInEvent
from .errors import (
    DegenerateStats,
    EmptyDataset,
    EmptyTestWarning,
    TooShort,
    WindowOutOfRange,
)
from .ingest import Recording

FEATURES = ("x_sv", "x_pv", "v_sv", "v_pv", "d")
N_FEATURES = len(FEATURES)
DEFAULT_WINDOW = 20
EVENT_FRAMES = 2 * EVENT_HALF_WINDOW + 1

# how ``d`` is measured; the default keeps the PV position frozen at the cut-in frame
D_AT_CUT_IN = "pv_at_cut_in"
D_CURRENT = "pv_current"

EventRef = tuple  # (recording_id, sv_track_id, pv_track_id, cut_in_frame)


@dataclass(frozen=True)
class FeatureRow:
    x_sv: float
    x_pv: float
    v_sv: float
    v_pv: float
    d: float
    acc_sv: float

    @property
    def inputs(self) -> tuple[float, ...]:
        return (self.x_sv, self.x_pv, self.v_sv, self.v_pv, self.d)


@dataclass(frozen=True, eq=False)
class SequenceSample:
    inputs: np.ndarray  # (T, 5)
    target: float
    event_ref: EventRef
    offset: int  # window start frame minus cut-in frame

    def __eq__(self, other):
        if not isinstance(other, SequenceSample):
            return NotImplemented
        return (
            self.target == other.target
            and self.event_ref == other.event_ref
            and self.offset == other.offset
            and np.array_equal(self.inputs, other.inputs)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def window_length(self) -> int:
        return self.inputs.shape[0]


def extract_rows(event: CutInEvent, recording: Recording, d_mode: str = D_AT_CUT_IN) -> list[FeatureRow]:
    """The 81 feature rows of ``event``, one per frame of its window."""
    sv = recording.tracks.get(event.sv_track_id)
    pv = recording.tracks.get(event.pv_track_id)
    lo, hi = event.window
    if sv is None or pv is None or not (sv.covers(lo, hi) and pv.covers(lo, hi)):
        raise WindowOutOfRange(f"event {event.key}: frames [{lo}, {hi}] not covered by both tracks")
    if d_mode not in (D_AT_CUT_IN, D_CURRENT):
        raise ValueError(f"unknown d_mode {d_mode!r}")
    s = slice(sv.index(lo), sv.index(hi) + 1)
    p = slice(pv.index(lo), pv.index(hi) + 1)
    x_sv, x_pv = sv.x[s], pv.x[p]
    if d_mode == D_AT_CUT_IN:
        d = pv.x[pv.index(event.cut_in_frame)] - x_sv
    else:
        d = x_pv - x_sv
    cols = (x_sv, x_pv, sv.x_velocity[s], pv.x_velocity[p], d, sv.x_acceleration[s])
    return [FeatureRow(*(float(c[i]) for c in cols)) for i in range(hi - lo + 1)]


def window_rows(
    rows: Sequence[FeatureRow],
    T: int = DEFAULT_WINDOW,
    event_ref: EventRef = (),
    first_offset: int = -EVENT_HALF_WINDOW,
) -> list[SequenceSample]:
    """Stride-1 windows: window k is rows[k:k+T], its target is rows[k+T].acc_sv."""
    if T < 1:
        raise ValueError("window length must be >= 1")
    if len(rows) < T + 1:
        raise TooShort(f"need at least {T + 1} rows, got {len(rows)}")
    inputs = np.array([r.inputs for r in rows], dtype=np.float64)
    targets = [r.acc_sv for r in rows]
    out = []
    for k in range(len(rows) - T):
        win = inputs[k : k + T].copy()
        win.flags.writeable = False
        out.append(SequenceSample(win, targets[k + T], tuple(event_ref), first_offset + k))
    return out


def build_samples(
    events: Sequence[CutInEvent],
    recordings: dict[int, Recording],
    T: int = DEFAULT_WINDOW,
    d_mode: str = D_AT_CUT_IN,
) -> list[SequenceSample]:
    samples = []
    for ev in events:
        rows = extract_rows(ev, recordings[ev.recording_id], d_mode)
        samples.extend(window_rows(rows, T, ev.key))
    return samples


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    mean: np.ndarray  # (5,)
    std: np.ndarray  # (5,)
    target_mean: float
    target_std: float
    constant: tuple[bool, ...] = (False,) * (N_FEATURES + 1)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))

    def check(self) -> None:
        vals = np.concatenate([self.mean, self.std, [self.target_mean, self.target_std]])
        if not np.all(np.isfinite(vals)):
            raise DegenerateStats("normalization statistics are not finite")
        if np.any(self.std <= 0) or self.target_std <= 0:
            raise DegenerateStats("normalization statistics contain a non-positive std")

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        self.check()
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize_inputs(self, z: np.ndarray) -> np.ndarray:
        self.check()
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def normalize_target(self, y):
        self.check()
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize_target(self, z):
        self.check()
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {
            "features": list(FEATURES),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "target_mean": float(self.target_mean),
            "target_std": float(self.target_std),
            "constant": list(self.constant),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            np.array(d["mean"]),
            np.array(d["std"]),
            float(d["target_mean"]),
            float(d["target_std"]),
            tuple(bool(c) for c in d.get("constant", (False,) * (N_FEATURES + 1))),
        )


def compute_stats(inputs: np.ndarray, targets: np.ndarray) -> NormalizationStats:
    """Population mean/std per input feature (over every window frame) and for the target.

    A constant column gets std 1 and is flagged in ``constant`` so it maps to 0.
    """
    flat = np.asarray(inputs, dtype=np.float64).reshape(-1, N_FEATURES)
    targets = np.asarray(targets, dtype=np.float64)
    mean, std = flat.mean(axis=0), flat.std(axis=0)
    t_mean, t_std = float(targets.mean()), float(targets.std())
    constant = tuple(bool(s == 0) for s in std) + (t_std == 0,)
    std = np.where(std == 0, 1.0, std)
    return NormalizationStats(mean, std, t_mean, t_std if t_std > 0 else 1.0, constant)


def normalize(sample: SequenceSample, stats: NormalizationStats) -> SequenceSample:
    return SequenceSample(
        stats.normalize_inputs(sample.inputs),
        float(stats.normalize_target(sample.target)),
        sample.event_ref,
        sample.offset,
    )


def denormalize_target(value, stats: NormalizationStats):
    return stats.denormalize_target(value)


def stack(samples: Sequence[SequenceSample]) -> tuple[np.ndarray, np.ndarray]:
    """(N, T, 5) inputs and (N,) targets."""
    if not samples:
        return np.zeros((0, 0, N_FEATURES)), np.zeros(0)
    X = np.stack([s.inputs for s in samples])
    y = np.array([s.target for s in samples], dtype=np.float64)
    return X, y


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Event-level train/test partition; samples are stored normalized."""

    train: list[SequenceSample]
    test: list[SequenceSample]
    stats: NormalizationStats
    split_seed: int
    ratio: float = 0.8
    window_length: int = DEFAULT_WINDOW
    _cache: dict = field(default_factory=dict, repr=False)

    def arrays(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        if side not in self._cache:
            self._cache[side] = stack(getattr(self, side))
        return self._cache[side]

    def physical(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        X, y = self.arrays(side)
        return self.stats.denormalize_inputs(X), self.stats.denormalize_target(y)

    def events(self, side: str) -> set:
        return {s.event_ref for s in getattr(self, side)}


def group_by_event(samples: Sequence[SequenceSample]) -> "OrderedDict[EventRef, list[SequenceSample]]":
    groups: OrderedDict = OrderedDict()
    for s in samples:
        groups.setdefault(s.event_ref, []).append(s)
    return groups


def split_dataset(samples: Sequence[SequenceSample], ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Shuffle events with ``seed`` and fill the training side event by event.

    Events are moved to train while the train count is below
    ``floor(ratio * total)``; the rest go to test. Statistics come from the
    training side only and both sides are returned normalized.

    Raises:
        EmptyDataset: no samples were given.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if not samples:
        raise EmptyDataset("no samples to split")
    groups = group_by_event(samples)
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    quota = int(np.floor(ratio * len(samples)))
    train_raw, test_raw = [], []
    for i in order:
        grp = groups[keys[i]]
        (train_raw if len(train_raw) < quota or not train_raw else test_raw).extend(grp)
    if not test_raw:
        warnings.warn("all samples fell into the training side; test side is empty", EmptyTestWarning)
    X, y = stack(train_raw)
    stats = compute_stats(X, y)
    T = samples[0].window_length
    return DatasetSplit(
        train=[normalize(s, stats) for s in train_raw],
        test=[normalize(s, stats) for s in test_raw],
        stats=stats,
        split_seed=seed,
        ratio=ratio,
        window_length=T,
    )


# --- file export -----------------------------------------------------------

_REF_COLUMNS = ("recording_id", "sv_track_id", "pv_track_id", "cut_in_frame")
SAMPLE_COLUMNS = ("sample", "step", *_REF_COLUMNS, "offset", *FEATURES, "target")


def samples_to_csv(samples: Sequence[SequenceSample]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for n, s in enumerate(samples):
        ref = list(s.event_ref) + [0] * (4 - len(s.event_ref))
        for t in range(s.window_length):
            w.writerow([n, t, *ref, s.offset, *(repr(float(v)) for v in s.inputs[t]), repr(float(s.target))])
    return out.getvalue()


def samples_from_csv(text: str) -> list[SequenceSample]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != SAMPLE_COLUMNS:
        raise ValueError(f"unexpected dataset header {header}")
    rows: OrderedDict = OrderedDict()
    for r in reader:
        rows.setdefault(int(r[0]), []).append(r)
    out = []
    for _, rs in rows.items():
        rs.sort(key=lambda r: int(r[1]))
        ref = tuple(int(v) for v in rs[0][2:6])
        inputs = np.array([[float(v) for v in r[7:12]] for r in rs])
        out.append(SequenceSample(inputs, float(rs[0][12]), ref, int(rs[0][6])))
    return out


def save_split(split: DatasetSplit, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "train.csv").write_text(samples_to_csv(split.train))
    (d / "test.csv").write_text(samples_to_csv(split.test))
    manifest = {
        "window_length": split.window_length,
        "ratio": split.ratio,
        "seed": split.split_seed,
        "n_train": len(split.train),
        "n_test": len(split.test),
        "stats": split.stats.to_dict(),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_split(directory: str | Path) -> DatasetSplit:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    return DatasetSplit(
        train=samples_from_csv((d / "train.csv").read_text()),
        test=samples_from_csv((d / "test.csv").read_text()),
        stats=NormalizationStats.from_dict(manifest["stats"]),
        split_seed=int(manifest["seed"]),
        ratio=float(manifest["ratio"]),
        window_length=int(manifest["window_length"]),
    )
