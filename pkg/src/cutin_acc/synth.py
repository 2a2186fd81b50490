"""
Seeded synthetic highway recordings with scripted lane changes.

Vehicles follow a clamped linear car-following law

    a = min(k_free (v_des - v), k_gap (gap - tau v) + k_speed (v_lead - v))

evaluated on the state ``reaction_lag`` frames in the past, plus Gaussian
acceleration noise. Velocity and position are integrated from the stored
acceleration, so the (x, v, a) columns of the output are consistent by
construction. Lane changes switch ``lane_id`` at the scripted frame and
blend ``y`` over the 40 frames around it.

The generator exists to test the pipeline without the licensed dataset;
it does not try to reproduce real traffic statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import EVENT_FRAMES, FEATURES, SequenceSample
from .detector import EVENT_HALF_WINDOW, CutInEvent
from .errors import InfeasibleScript
from .ingest import DECREASING, INCREASING, Recording, Track

A_MIN, A_MAX = -4.0, 2.0
BLEND_FRAMES = 40
NO_LEADER_GAP = 1e9


@dataclass(frozen=True)
class VehiclePlan:
    track_id: int
    lane: int
    x0: float  # rear bumper, m
    v0: float
    desired_speed: float
    length: float = 4.5
    width: float = 1.8
    vehicle_class: str = "car"
    change_frame: int | None = None  # 1-based frame where lane_id switches
    target_lane: int | None = None
    desired_speed_after: float | None = None  # takes over at change_frame
    k_gap: float = 0.2
    k_speed: float = 0.6
    k_free: float = 0.3
    headway: float = 1.5
    reaction_lag: int = 0
    aggressive: bool = True  # ground-truth label for a scripted lane change


@dataclass(frozen=True)
class ScenarioScript:
    seed: int
    duration_frames: int
    vehicles: tuple[VehiclePlan, ...]
    lane_centers: dict = field(default_factory=lambda: {1: 0.0, 2: 3.75, 3: 7.5})
    noise_sigma: float = 0.0
    frame_rate: float = 25.0
    recording_id: int = 1
    direction: str = INCREASING
    road_length: float = 100_000.0

    def validate(self) -> None:
        if self.duration_frames < 1:
            raise InfeasibleScript("duration must be positive")
        ids = [p.track_id for p in self.vehicles]
        if len(set(ids)) != len(ids) or min(ids, default=1) < 1:
            raise InfeasibleScript("track ids must be unique and >= 1")
        for p in self.vehicles:
            if p.lane not in self.lane_centers:
                raise InfeasibleScript(f"vehicle {p.track_id}: unknown lane {p.lane}")
            if p.change_frame is not None:
                lo, hi = EVENT_HALF_WINDOW + 1, self.duration_frames - EVENT_HALF_WINDOW - 1
                if not lo <= p.change_frame <= hi:
                    raise InfeasibleScript(
                        f"vehicle {p.track_id}: lane change at frame {p.change_frame} outside [{lo}, {hi}]"
                    )
                if p.target_lane not in self.lane_centers or p.target_lane == p.lane:
                    raise InfeasibleScript(f"vehicle {p.track_id}: bad target lane {p.target_lane}")
        for lane in self.lane_centers:
            same = sorted((p for p in self.vehicles if p.lane == lane), key=lambda p: p.x0)
            for rear, front in zip(same, same[1:]):
                if rear.x0 + rear.length > front.x0:
                    raise InfeasibleScript(
                        f"vehicles {rear.track_id} and {front.track_id} overlap in lane {lane} at start"
                    )


@dataclass
class Generated:
    recording: Recording
    events: list[CutInEvent]
    # true (unmirrored) state, frames x vehicles, in plan order
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray


def _lane_schedule(plan: VehiclePlan, n: int) -> np.ndarray:
    lanes = np.full(n, plan.lane, dtype=np.int64)
    if plan.change_frame is not None:
        lanes[plan.change_frame - 1 :] = plan.target_lane
    return lanes


def _y_schedule(plan: VehiclePlan, n: int, centers: dict) -> np.ndarray:
    y = np.full(n, centers[plan.lane], dtype=np.float64)
    if plan.change_frame is None:
        return y
    c = plan.change_frame - 1
    y0, y1 = centers[plan.lane], centers[plan.target_lane]
    k = np.arange(n)
    s = np.clip((k - (c - BLEND_FRAMES // 2)) / BLEND_FRAMES, 0.0, 1.0)
    return y0 + (y1 - y0) * (1 - np.cos(np.pi * s)) / 2


def generate(script: ScenarioScript) -> Generated:
    """Integrate the script and return the recording plus ground-truth cut-ins.

    Raises:
        InfeasibleScript: overlapping vehicles at start or an unplaceable lane change.
    """
    script.validate()
    plans = list(script.vehicles)
    n, m = script.duration_frames, len(plans)
    dt = 1.0 / script.frame_rate
    rng = np.random.default_rng(script.seed)
    noise = rng.standard_normal((n, m)) * script.noise_sigma

    lanes = np.stack([_lane_schedule(p, n) for p in plans], axis=1) if m else np.zeros((n, 0), np.int64)
    lengths = np.array([p.length for p in plans])
    x = np.zeros((n, m))
    v = np.zeros((n, m))
    a = np.zeros((n, m))
    leader = np.full((n, m), -1, dtype=np.int64)
    if m:
        x[0] = [p.x0 for p in plans]
        v[0] = [p.v0 for p in plans]

    for k in range(n):
        # leaders at frame k: nearest vehicle ahead in the same lane
        for j in range(m):
            ahead = (lanes[k] == lanes[k, j]) & (x[k] > x[k, j])
            if ahead.any():
                cand = np.nonzero(ahead)[0]
                leader[k, j] = cand[np.argmin(x[k, cand])]
        for j, p in enumerate(plans):
            kl = max(k - p.reaction_lag, 0)
            vd = p.desired_speed
            if p.desired_speed_after is not None and p.change_frame is not None and kl >= p.change_frame - 1:
                vd = p.desired_speed_after
            acc = p.k_free * (vd - v[kl, j])
            li = leader[kl, j]
            if li >= 0:
                gap = x[kl, li] - x[kl, j] - lengths[j]
                acc = min(acc, p.k_gap * (gap - p.headway * v[kl, j]) + p.k_speed * (v[kl, li] - v[kl, j]))
            acc = min(max(acc, A_MIN), A_MAX) + noise[k, j]
            acc = min(max(acc, A_MIN), A_MAX)
            if v[k, j] + acc * dt < 0:
                acc = -v[k, j] / dt
            a[k, j] = acc
        if k + 1 < n:
            v[k + 1] = v[k] + a[k] * dt
            x[k + 1] = x[k] + v[k + 1] * dt

    frames = np.arange(1, n + 1)
    mirrored = script.direction == DECREASING
    sign = -1.0 if mirrored else 1.0
    tracks = {}
    for j, p in enumerate(plans):
        y = _y_schedule(p, n, script.lane_centers)
        yv = np.gradient(y, dt) if n > 1 else np.zeros(n)
        ya = np.gradient(yv, dt) if n > 1 else np.zeros(n)
        lead = leader[:, j]
        pv = np.where(lead >= 0, v[np.arange(n), np.maximum(lead, 0)], 0.0)
        tracks[p.track_id] = Track(
            track_id=p.track_id,
            vehicle_class=p.vehicle_class,
            direction=DECREASING if mirrored else INCREASING,
            frames=frames,
            x=script.road_length - x[:, j] if mirrored else x[:, j],
            y=y,
            width=np.full(n, p.length),
            height=np.full(n, p.width),
            x_velocity=sign * v[:, j],
            y_velocity=yv,
            x_acceleration=sign * a[:, j],
            y_acceleration=ya,
            preceding_x_velocity=sign * pv,
            lane_id=lanes[:, j],
        )
    rec = Recording(
        recording_id=script.recording_id,
        frame_rate=script.frame_rate,
        tracks=tracks,
        lane_count=len(script.lane_centers),
    )
    return Generated(rec, _ground_truth(script, plans, x, a, lanes, lengths), x, v, a)


def _ground_truth(script, plans, x, a, lanes, lengths, horizon: int = 40) -> list[CutInEvent]:
    events = []
    n = script.duration_frames
    for j, p in enumerate(plans):
        if p.change_frame is None or not p.aggressive:
            continue
        c = p.change_frame - 1
        behind = (lanes[c] == p.target_lane) & (x[c] < x[c, j])
        behind[j] = False
        if not behind.any():
            continue
        cand = np.nonzero(behind)[0]
        s = cand[np.argmax(x[c, cand])]
        events.append(
            CutInEvent(
                recording_id=script.recording_id,
                sv_track_id=plans[s].track_id,
                pv_track_id=p.track_id,
                cut_in_frame=p.change_frame,
                lane_from=p.lane,
                lane_to=p.target_lane,
                gap_at_cut_in=float(x[c, j] - x[c, s] - lengths[s]),
                sv_min_accel_after=float(a[c : min(c + horizon + 1, n), s].min()),
            )
        )
    events.sort(key=lambda e: (e.cut_in_frame, e.pv_track_id))
    return events


# --- scripted scenarios -------------------------------------------------------

GROUP_SPACING = 600.0  # m between independent SV/PV pairs


def cut_in_script(
    seed: int,
    n_events: int,
    duration_frames: int = 240,
    noise_sigma: float = 0.05,
    reaction_lag: int = 0,
    n_benign: int = 0,
    recording_id: int = 1,
    direction: str = INCREASING,
    sv_length: float | None = None,
) -> ScenarioScript:
    """Independent SV/PV pairs, each with one aggressive cut-in from lane 3 into lane 2.

    ``n_benign`` extra pairs change lanes far ahead of their follower and
    are not labelled as cut-ins. Pair parameters are drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / 25.0
    vehicles = []
    tid = 1
    lo, hi = EVENT_HALF_WINDOW + 1 + 10, duration_frames - EVENT_HALF_WINDOW - 1
    if lo > hi:
        raise InfeasibleScript("duration too short for a cut-in window")
    for g in range(n_events + n_benign):
        aggressive = g < n_events
        base = g * GROUP_SPACING
        v_sv = float(rng.uniform(20.0, 32.0))
        v_pv = v_sv + float(rng.uniform(-1.0, 2.5))
        c = int(rng.integers(lo, hi + 1))
        gap_c = float(rng.uniform(5.0, 16.0)) if aggressive else float(rng.uniform(70.0, 90.0))
        sv_len = float(rng.choice([4.5, 4.8, 12.0], p=[0.45, 0.4, 0.15]))
        if sv_length is not None:
            sv_len = sv_length
        pv_len = float(rng.choice([4.3, 4.6, 5.0]))
        # constant speeds before the change, so the PV start follows from the gap at c
        x_pv0 = base + sv_len + gap_c - (v_pv - v_sv) * (c - 1) * dt
        after = v_pv + float(rng.uniform(-3.0, 1.0))
        vehicles.append(
            VehiclePlan(
                track_id=tid,
                lane=2,
                x0=base,
                v0=v_sv,
                desired_speed=v_sv,
                length=sv_len,
                vehicle_class="truck" if sv_len > 10 else "car",
                reaction_lag=reaction_lag,
            )
        )
        vehicles.append(
            VehiclePlan(
                track_id=tid + 1,
                lane=3,
                x0=x_pv0,
                v0=v_pv,
                desired_speed=v_pv,
                desired_speed_after=after,
                length=pv_len,
                change_frame=c,
                target_lane=2,
                aggressive=aggressive,
            )
        )
        tid += 2
    return ScenarioScript(
        seed=seed,
        duration_frames=duration_frames,
        vehicles=tuple(vehicles),
        noise_sigma=noise_sigma,
        recording_id=recording_id,
        direction=direction,
    )


def free_flow_script(seed: int, n_vehicles: int = 6, duration_frames: int = 240, noise_sigma: float = 0.05) -> ScenarioScript:
    """Traffic without any lane change."""
    rng = np.random.default_rng(seed)
    vehicles = []
    for i in range(n_vehicles):
        lane = 1 + i % 3
        v0 = float(rng.uniform(20.0, 32.0))
        vehicles.append(VehiclePlan(track_id=i + 1, lane=lane, x0=i * 60.0, v0=v0, desired_speed=v0))
    return ScenarioScript(seed=seed, duration_frames=duration_frames, vehicles=tuple(vehicles), noise_sigma=noise_sigma)


def sequence_dependent_corpus(
    seed: int,
    n_events: int,
    lag: int = 10,
    noise_sigma: float = 0.05,
    events_per_recording: int = 1,
    duration_frames: int = 240,
    sv_length: float = 4.5,
):
    """Cut-in recordings whose SV reacts to the state ``lag`` frames back.

    Returns (list of Generated, description). The target acceleration at
    frame k is the car-following law applied to frame k - lag plus noise of
    std ``noise_sigma``, so it cannot be recovered exactly from the last
    observed frame alone when ``lag`` > 0. Every SV has length
    ``sv_length`` since vehicle length is not among the model inputs.
    """
    if n_events < 20:
        raise ValueError("n_events must be >= 20")
    out = []
    rid, remaining = 1, n_events
    while remaining > 0:
        k = min(events_per_recording, remaining)
        script = cut_in_script(
            seed=seed * 1000 + rid,
            n_events=k,
            duration_frames=duration_frames,
            noise_sigma=noise_sigma,
            reaction_lag=lag,
            recording_id=rid,
            sv_length=sv_length,
        )
        out.append(generate(script))
        remaining -= k
        rid += 1
    plan = VehiclePlan(0, 0, 0.0, 0.0, 0.0)
    description = {
        "lag_frames": lag,
        "noise_sigma": noise_sigma,
        "k_gap": plan.k_gap,
        "k_speed": plan.k_speed,
        "k_free": plan.k_free,
        "headway": plan.headway,
        "accel_bounds": [A_MIN, A_MAX],
        "law": "a[k] = clip(min(k_free*(v_des - v), k_gap*(gap - headway*v) + k_speed*(v_lead - v)) at frame k-lag) + noise",
        "sv_length": sv_length,
        "sufficient_state": ["gap", "v_sv", "v_pv"],
    }
    return out, description


def linear_corpus(
    seed: int,
    n_events: int,
    T: int = 20,
    noise_sigma: float = 0.01,
    rho: float = 0.9,
) -> tuple[list[SequenceSample], np.ndarray]:
    """Windows of AR(1) feature paths whose target is a fixed linear map of the
    last frame plus Gaussian noise.

    Features have unit stationary variance and the map has unit norm, so the
    clean target has roughly unit variance and ``noise_sigma`` is the noise
    floor in normalized units. Returns (samples, weights).
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(len(FEATURES))
    w /= np.linalg.norm(w)
    samples = []
    innov = np.sqrt(1 - rho**2)
    for e in range(n_events):
        f = np.zeros((EVENT_FRAMES, len(FEATURES)))
        f[0] = rng.standard_normal(len(FEATURES))
        for k in range(1, EVENT_FRAMES):
            f[k] = rho * f[k - 1] + innov * rng.standard_normal(len(FEATURES))
        eps = rng.standard_normal(EVENT_FRAMES - T) * noise_sigma
        for k in range(EVENT_FRAMES - T):
            win = f[k : k + T].copy()
            samples.append(SequenceSample(win, float(win[-1] @ w + eps[k]), (0, 0, e + 1, EVENT_HALF_WINDOW + 1), k - EVENT_HALF_WINDOW))
    return samples, w
