import numpy as np
import pytest

from cutin_acc import ingest
from cutin_acc.ingest import DEFAULT_COLUMNS, FLOAT_FIELDS, Recording, Track

HEADER = ",".join(DEFAULT_COLUMNS[k] for k in ("frame", "track_id", *FLOAT_FIELDS, "lane_id"))


def row(frame, tid, x=0.0, y=0.0, width=4.5, height=1.8, xv=20.0, yv=0.0, xa=0.0, ya=0.0, pxv=0.0, lane=2):
    return f"{frame},{tid},{x},{y},{width},{height},{xv},{yv},{xa},{ya},{pxv},{lane}"


def make_track(tid, frames, x, v=None, a=None, lane=2, width=4.5, direction=None):
    """Track from per-frame arrays; scalars broadcast."""
    frames = np.asarray(frames)
    n = len(frames)
    x = np.broadcast_to(np.asarray(x, dtype=float), (n,))
    v = np.broadcast_to(np.asarray(20.0 if v is None else v, dtype=float), (n,))
    a = np.broadcast_to(np.asarray(0.0 if a is None else a, dtype=float), (n,))
    lane = np.broadcast_to(np.asarray(lane), (n,))
    if direction is None:
        direction = ingest.INCREASING if np.median(v) >= 0 else ingest.DECREASING
    return Track(
        track_id=tid,
        vehicle_class="car",
        direction=direction,
        frames=frames,
        x=x,
        y=np.zeros(n),
        width=np.full(n, width),
        height=np.full(n, 1.8),
        x_velocity=v,
        y_velocity=np.zeros(n),
        x_acceleration=a,
        y_acceleration=np.zeros(n),
        preceding_x_velocity=np.zeros(n),
        lane_id=lane,
    )


def random_recording(seed: int, max_tracks: int = 6) -> Recording:
    rng = np.random.default_rng(seed)
    tracks = {}
    for tid in rng.choice(np.arange(1, 50), size=rng.integers(1, max_tracks + 1), replace=False):
        n = int(rng.integers(1, 60))
        start = int(rng.integers(1, 200))
        sign = rng.choice([-1.0, 1.0])
        tracks[int(tid)] = Track(
            track_id=int(tid),
            vehicle_class=str(rng.choice(["car", "truck"])),
            direction=ingest.INCREASING if sign > 0 else ingest.DECREASING,
            frames=np.arange(start, start + n),
            x=rng.uniform(0, 400, n),
            y=rng.uniform(0, 30, n),
            width=rng.uniform(3, 15, n),
            height=rng.uniform(1.5, 2.6, n),
            x_velocity=sign * rng.uniform(5, 40, n),
            y_velocity=rng.normal(0, 0.3, n),
            x_acceleration=rng.normal(0, 1, n),
            y_acceleration=rng.normal(0, 0.1, n),
            preceding_x_velocity=rng.uniform(0, 40, n),
            lane_id=rng.integers(1, 7, n),
        )
    lanes = {int(v) for t in tracks.values() for v in t.lane_id}
    return Recording(recording_id=int(rng.integers(1, 61)), frame_rate=25.0, tracks=tracks, lane_count=len(lanes))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance verdicts --------------------------------------------------------

VERDICTS: list[str] = []


def verdict(criterion: str, ok: bool, detail: str = "") -> bool:
    """Record one PASS/FAIL line; printed again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
