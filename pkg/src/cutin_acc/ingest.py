"""
Parsing of highD-style ``tracks`` files into immutable in-memory recordings.

A recording file is delimiter-separated text with one header row and one row
per (frame, vehicle). Columns are looked up by name through a column map, so
their order does not matter. A small ``key = value`` metadata file may sit
next to it and carry ``recording_id``, ``frame_rate`` and ``lane_count``.

Usage::

    rec = load_recording("data/01_tracks.csv")
    rec = normalize_direction(rec)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, TextIO

import numpy as np

from .errors import (
    AmbiguousDirection,
    MalformedRow,
    MissingColumn,
    NonContiguousFrames,
)

DEFAULT_FRAME_RATE = 25.0
AMBIGUOUS_SPEED = 0.1  # m/s

#: logical field -> header name in the file
DEFAULT_COLUMNS: dict[str, str] = {
    "frame": "frame",
    "track_id": "id",
    "x": "x",
    "y": "y",
    "width": "width",
    "height": "height",
    "x_velocity": "xVelocity",
    "y_velocity": "yVelocity",
    "x_acceleration": "xAcceleration",
    "y_acceleration": "yAcceleration",
    "preceding_x_velocity": "precedingXVelocity",
    "lane_id": "laneId",
}
# optional columns; absent -> defaults
CLASS_COLUMN = "class"
MIRRORED_COLUMN = "mirrored"

FLOAT_FIELDS = (
    "x",
    "y",
    "width",
    "height",
    "x_velocity",
    "y_velocity",
    "x_acceleration",
    "y_acceleration",
    "preceding_x_velocity",
)
INCREASING = "increasing_x"
DECREASING = "decreasing_x"
VEHICLE_CLASSES = ("car", "truck")


@dataclass(frozen=True)
class TrackSample:
    frame: int
    track_id: int
    x: float
    y: float
    width: float
    height: float
    x_velocity: float
    y_velocity: float
    x_acceleration: float
    y_acceleration: float
    preceding_x_velocity: float
    lane_id: int


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Track:
    """One vehicle's contiguous time series, stored column-wise.

    Per-sample quantities are read-only numpy arrays aligned with ``frames``.
    """

    track_id: int
    vehicle_class: str
    direction: str
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    width: np.ndarray
    height: np.ndarray
    x_velocity: np.ndarray
    y_velocity: np.ndarray
    x_acceleration: np.ndarray
    y_acceleration: np.ndarray
    preceding_x_velocity: np.ndarray
    lane_id: np.ndarray
    is_mirrored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "frames", _frozen(self.frames, np.int64))
        object.__setattr__(self, "lane_id", _frozen(self.lane_id, np.int64))
        for name in FLOAT_FIELDS:
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))
        n = len(self.frames)
        for name in FLOAT_FIELDS + ("lane_id",):
            if len(getattr(self, name)) != n:
                raise ValueError(f"track {self.track_id}: column {name} has wrong length")
        if n and np.any(np.diff(self.frames) != 1):
            raise NonContiguousFrames(self.track_id, "frames are not contiguous")
        if self.vehicle_class not in VEHICLE_CLASSES:
            raise ValueError(f"unknown vehicle class {self.vehicle_class!r}")
        if self.direction not in (INCREASING, DECREASING):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Track):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    def covers(self, lo: int, hi: int) -> bool:
        """True if every frame in ``[lo, hi]`` is present."""
        return len(self) > 0 and self.first_frame <= lo and hi <= self.last_frame

    def index(self, frame: int) -> int:
        i = frame - self.first_frame
        if not 0 <= i < len(self):
            raise KeyError(f"frame {frame} not in track {self.track_id}")
        return i

    def sample(self, frame: int) -> TrackSample:
        i = self.index(frame)
        return TrackSample(
            frame=int(self.frames[i]),
            track_id=self.track_id,
            lane_id=int(self.lane_id[i]),
            **{name: float(getattr(self, name)[i]) for name in FLOAT_FIELDS},
        )

    @property
    def samples(self) -> list[TrackSample]:
        return [self.sample(int(f)) for f in self.frames]

    def median_x_velocity(self) -> float:
        return float(np.median(self.x_velocity))


@dataclass(frozen=True, eq=False)
class Recording:
    recording_id: int
    frame_rate: float
    tracks: Mapping[int, Track]
    lane_count: int
    normalized: bool = False
    mirror_reference: float | None = None

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        tracks = dict(sorted(self.tracks.items()))
        for tid, tr in tracks.items():
            if tid != tr.track_id:
                raise ValueError(f"track key {tid} != track_id {tr.track_id}")
        object.__setattr__(self, "tracks", MappingProxyType(tracks))

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def __eq__(self, other) -> bool:
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.recording_id == other.recording_id
            and self.frame_rate == other.frame_rate
            and self.lane_count == other.lane_count
            and self.normalized == other.normalized
            and self.mirror_reference == other.mirror_reference
            and dict(self.tracks) == dict(other.tracks)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def n_samples(self) -> int:
        return sum(len(t) for t in self.tracks.values())


def _infer_direction(x_velocity: np.ndarray) -> str:
    if len(x_velocity) == 0:
        return INCREASING
    return INCREASING if np.median(x_velocity) >= 0 else DECREASING


def parse_tracks(
    source: str | TextIO,
    recording_id: int,
    frame_rate: float = DEFAULT_FRAME_RATE,
    columns: Mapping[str, str] | None = None,
    delimiter: str = ",",
    lane_count: int | None = None,
) -> Recording:
    """Parse one recording's rows into a :class:`Recording`.

    Args:
        source: file contents or an open text stream.
        recording_id: identifier stored on the result.
        frame_rate: frames per second of the recording.
        columns: overrides for :data:`DEFAULT_COLUMNS` (logical -> header name).
        delimiter: field separator.
        lane_count: number of lanes; inferred from distinct lane ids if omitted.

    Raises:
        MissingColumn: a mapped column is absent from the header.
        MalformedRow: a field is not numeric or violates a sample invariant.
        NonContiguousFrames: a track skips or repeats a frame.
    """
    colmap = {**DEFAULT_COLUMNS, **(columns or {})}
    stream = io.StringIO(source) if isinstance(source, str) else source
    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MissingColumn("empty input: no header row") from None

    pos = {}
    for logical, name in colmap.items():
        if name not in header:
            raise MissingColumn(f"header lacks column {name!r} (for {logical})")
        pos[logical] = header.index(name)
    class_pos = header.index(CLASS_COLUMN) if CLASS_COLUMN in header else None
    mirrored_pos = header.index(MIRRORED_COLUMN) if MIRRORED_COLUMN in header else None

    rows: dict[int, list[tuple]] = {}
    classes: dict[int, str] = {}
    mirrored: dict[int, bool] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
        try:
            frame = int(row[pos["frame"]])
            tid = int(row[pos["track_id"]])
            lane = int(row[pos["lane_id"]])
            vals = tuple(float(row[pos[name]]) for name in FLOAT_FIELDS)
        except ValueError as exc:
            raise MalformedRow(line, str(exc)) from None
        if not all(math.isfinite(v) for v in vals):
            raise MalformedRow(line, "non-finite value")
        if frame < 1 or tid < 1 or lane < 1:
            raise MalformedRow(line, "frame, id and laneId must be >= 1")
        if vals[2] <= 0 or vals[3] <= 0:
            raise MalformedRow(line, "width and height must be positive")
        if class_pos is not None:
            cls = row[class_pos].strip().lower()
            if cls not in VEHICLE_CLASSES:
                raise MalformedRow(line, f"unknown vehicle class {cls!r}")
            classes[tid] = cls
        if mirrored_pos is not None:
            mirrored[tid] = row[mirrored_pos].strip() in ("1", "true", "True")
        rows.setdefault(tid, []).append((frame, lane) + vals)

    tracks = {}
    for tid, items in rows.items():
        items.sort(key=lambda r: r[0])
        arr = np.array([r[2:] for r in items], dtype=np.float64).reshape(len(items), len(FLOAT_FIELDS))
        frames = np.array([r[0] for r in items], dtype=np.int64)
        if np.any(np.diff(frames) != 1):
            bad = int(frames[1:][np.diff(frames) != 1][0])
            raise NonContiguousFrames(tid, f"gap or duplicate at frame {bad}")
        cols = {name: arr[:, j] for j, name in enumerate(FLOAT_FIELDS)}
        tracks[tid] = Track(
            track_id=tid,
            vehicle_class=classes.get(tid, "car"),
            direction=_infer_direction(cols["x_velocity"]),
            frames=frames,
            lane_id=np.array([r[1] for r in items], dtype=np.int64),
            is_mirrored=mirrored.get(tid, False),
            **cols,
        )

    if lane_count is None:
        lanes = {int(v) for t in tracks.values() for v in np.unique(t.lane_id)}
        lane_count = len(lanes)
    return Recording(
        recording_id=recording_id,
        frame_rate=frame_rate,
        tracks=tracks,
        lane_count=lane_count,
        normalized=mirrored_pos is not None,
    )


def serialize_recording(recording: Recording, delimiter: str = ",") -> str:
    """Inverse of :func:`parse_tracks` (default column names, exact floats)."""
    out = io.StringIO()
    w = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    header = [DEFAULT_COLUMNS[k] for k in ("frame", "track_id", *FLOAT_FIELDS, "lane_id")]
    header.append(CLASS_COLUMN)
    if recording.normalized:
        header.append(MIRRORED_COLUMN)
    w.writerow(header)
    for tid, tr in recording.tracks.items():
        for i in range(len(tr)):
            row = [int(tr.frames[i]), tid]
            row += [repr(float(getattr(tr, name)[i])) for name in FLOAT_FIELDS]
            row += [int(tr.lane_id[i]), tr.vehicle_class]
            if recording.normalized:
                row.append(int(tr.is_mirrored))
            w.writerow(row)
    return out.getvalue()


def read_metadata(path: str | Path) -> dict[str, str]:
    """Read a ``key = value`` metadata file (``#`` starts a comment)."""
    meta = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected key=value, got {raw!r}")
        meta[key.strip()] = value.strip()
    return meta


def metadata_text(recording: Recording) -> str:
    lines = [
        f"recording_id = {recording.recording_id}",
        f"frame_rate = {recording.frame_rate!r}",
        f"lane_count = {recording.lane_count}",
    ]
    if recording.normalized:
        lines.append(f"mirror_reference = {recording.mirror_reference!r}")
    return "\n".join(lines) + "\n"


def meta_path_for(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix(".meta")


def load_recording(
    path: str | Path,
    recording_id: int | None = None,
    frame_rate: float | None = None,
    columns: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> Recording:
    """Load a tracks file plus its optional sibling ``.meta`` file.

    Explicit arguments win over metadata values.
    """
    path = Path(path)
    meta = {}
    if meta_path_for(path).exists():
        meta = read_metadata(meta_path_for(path))
    rid = recording_id if recording_id is not None else int(meta.get("recording_id", 0))
    rate = frame_rate if frame_rate is not None else float(meta.get("frame_rate", DEFAULT_FRAME_RATE))
    lanes = int(meta["lane_count"]) if "lane_count" in meta else None
    with path.open(newline="") as fh:
        rec = parse_tracks(fh, rid, rate, columns=columns, delimiter=delimiter, lane_count=lanes)
    if rec.normalized:
        ref = meta.get("mirror_reference")
        rec = replace(rec, mirror_reference=None if ref in (None, "None") else float(ref))
    return rec


def save_recording(recording: Recording, path: str | Path) -> None:
    path = Path(path)
    path.write_text(serialize_recording(recording))
    meta_path_for(path).write_text(metadata_text(recording))


def mirror_track(track: Track, reference: float) -> Track:
    """Reflect a track about ``reference``: x -> reference - x.

    Velocities and accelerations along x change sign, the direction label
    flips and ``is_mirrored`` toggles. Applying it twice with the same
    reference restores the original track.
    """
    return replace(
        track,
        x=reference - track.x,
        x_velocity=-track.x_velocity,
        x_acceleration=-track.x_acceleration,
        preceding_x_velocity=-track.preceding_x_velocity,
        direction=INCREASING if track.direction == DECREASING else DECREASING,
        is_mirrored=not track.is_mirrored,
    )


def normalize_direction(recording: Recording) -> Recording:
    """Mirror every decreasing-x track so all traffic moves towards +x.

    The mirror reference is the largest x found in the recording. Already
    normalized recordings are returned unchanged.

    Raises:
        AmbiguousDirection: a track's median x velocity is within 0.1 m/s of 0.
    """
    if recording.normalized:
        return recording
    for tr in recording.tracks.values():
        if abs(tr.median_x_velocity()) <= AMBIGUOUS_SPEED:
            raise AmbiguousDirection(
                tr.track_id, f"median x velocity {tr.median_x_velocity():.3f} m/s is too close to 0"
            )
    xs = [float(t.x.max()) for t in recording.tracks.values() if len(t)]
    reference = max(xs) if xs else 0.0
    tracks = {
        tid: mirror_track(tr, reference) if tr.direction == DECREASING else tr
        for tid, tr in recording.tracks.items()
    }
    return replace(recording, tracks=tracks, normalized=True, mirror_reference=reference)


def iter_samples(recording: Recording) -> Iterable[TrackSample]:
    for tr in recording.tracks.values():
        yield from tr.samples
