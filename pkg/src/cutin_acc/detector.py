"""Screening of direction-normalized recordings for aggressive cut-ins.

A cut-in is a preceding vehicle (PV) whose lane id switches into the lane of
a following subject vehicle (SV) close enough that the SV has to brake. The
predicate is evaluated at the single frame where the PV's lane id changes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import NotNormalized
from .ingest import Recording, Track

EVENT_HALF_WINDOW = 40  # frames kept on each side of the cut-in frame
MIN_SPEED = 0.1  # m/s, floor for the headway denominator


@dataclass(frozen=True)
class DetectorConfig:
    max_headway_s: float = 2.0
    min_sv_decel: float = -0.5
    decel_horizon_frames: int = 40
    min_gap_m: float = 0.5

    def __post_init__(self):
        if not self.max_headway_s > 0:
            raise ValueError("max_headway_s must be positive")
        if not self.min_sv_decel < 0:
            raise ValueError("min_sv_decel must be negative")
        if self.decel_horizon_frames < 1:
            raise ValueError("decel_horizon_frames must be >= 1")


@dataclass(frozen=True, order=True)
class CutInEvent:
    recording_id: int
    sv_track_id: int
    pv_track_id: int
    cut_in_frame: int
    lane_from: int
    lane_to: int
    gap_at_cut_in: float
    sv_min_accel_after: float

    @property
    def key(self) -> tuple[int, int, int, int]:
        """Identity of the event independent of the measured quantities."""
        return (self.recording_id, self.sv_track_id, self.pv_track_id, self.cut_in_frame)

    @property
    def window(self) -> tuple[int, int]:
        return (self.cut_in_frame - EVENT_HALF_WINDOW, self.cut_in_frame + EVENT_HALF_WINDOW)


EVENT_COLUMNS = [f.name for f in fields(CutInEvent)]


def bumper_gap(pv: Track, sv: Track, frame: int) -> float:
    """Distance from the SV's front to the PV's rear (x is the rear edge)."""
    i, j = pv.index(frame), sv.index(frame)
    return float(pv.x[i] - sv.x[j] - sv.width[j])


def min_accel_after(sv: Track, frame: int, horizon: int) -> float:
    i = sv.index(frame)
    return float(sv.x_acceleration[i : i + horizon + 1].min())


def lane_transitions(track: Track) -> list[tuple[int, int, int]]:
    """(frame, lane_from, lane_to) for every lane id change of a track."""
    lanes = track.lane_id
    idx = np.nonzero(lanes[1:] != lanes[:-1])[0] + 1
    return [(int(track.frames[i]), int(lanes[i - 1]), int(lanes[i])) for i in idx]


def count_lane_changes(recording: Recording) -> int:
    """Number of frames, over all tracks, whose lane id differs from the previous frame."""
    return sum(int(np.count_nonzero(t.lane_id[1:] != t.lane_id[:-1])) for t in recording.tracks.values())


def _nearest_follower(recording: Recording, pv: Track, frame: int, lane: int) -> Track | None:
    x_pv = pv.x[pv.index(frame)]
    best, best_x = None, -np.inf
    for tr in recording.tracks.values():
        if tr.track_id == pv.track_id or not tr.first_frame <= frame <= tr.last_frame:
            continue
        i = tr.index(frame)
        if tr.lane_id[i] != lane or not tr.x[i] < x_pv:
            continue
        # ties resolved towards the lower track id for determinism
        if tr.x[i] > best_x:
            best, best_x = tr, tr.x[i]
    return best


def detect_cut_ins(recording: Recording, config: DetectorConfig | None = None) -> list[CutInEvent]:
    """Return every aggressive cut-in in ``recording``, sorted by (frame, PV id).

    For each PV lane transition at frame f the SV is the nearest vehicle
    behind the PV in the destination lane at f. The event is kept when the
    bumper gap exceeds ``min_gap_m``, the time headway is below
    ``max_headway_s``, the SV's x acceleration dips below ``min_sv_decel``
    within ``decel_horizon_frames`` after f, and both tracks cover f +/- 40.

    Raises:
        NotNormalized: ``normalize_direction`` was not applied.
    """
    config = config or DetectorConfig()
    if not recording.normalized:
        raise NotNormalized("detect_cut_ins needs a direction-normalized recording")
    events = []
    for pv in recording.tracks.values():
        for frame, lane_from, lane_to in lane_transitions(pv):
            sv = _nearest_follower(recording, pv, frame, lane_to)
            if sv is None:
                continue
            lo, hi = frame - EVENT_HALF_WINDOW, frame + EVENT_HALF_WINDOW
            if not (pv.covers(lo, hi) and sv.covers(lo, hi)):
                continue
            gap = bumper_gap(pv, sv, frame)
            if not gap > config.min_gap_m:
                continue
            v_sv = float(sv.x_velocity[sv.index(frame)])
            if not gap / max(v_sv, MIN_SPEED) < config.max_headway_s:
                continue
            a_min = min_accel_after(sv, frame, config.decel_horizon_frames)
            if not a_min < config.min_sv_decel:
                continue
            events.append(
                CutInEvent(
                    recording_id=recording.recording_id,
                    sv_track_id=sv.track_id,
                    pv_track_id=pv.track_id,
                    cut_in_frame=frame,
                    lane_from=lane_from,
                    lane_to=lane_to,
                    gap_at_cut_in=gap,
                    sv_min_accel_after=a_min,
                )
            )
    events.sort(key=lambda e: (e.cut_in_frame, e.pv_track_id))
    return events


def events_to_csv(events: list[CutInEvent]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for e in events:
        w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(e)])
    return out.getvalue()


def events_from_csv(text: str) -> list[CutInEvent]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(EVENT_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"event file lacks columns {sorted(missing)}")
    out = []
    for row in reader:
        kw = {}
        for f in fields(CutInEvent):
            kw[f.name] = float(row[f.name]) if f.type == "float" else int(row[f.name])
        out.append(CutInEvent(**kw))
    return out


def save_events(events: list[CutInEvent], path: str | Path) -> None:
    Path(path).write_text(events_to_csv(events))


def load_events(path: str | Path) -> list[CutInEvent]:
    return events_from_csv(Path(path).read_text())
