import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutin_acc import detector, ingest, synth
from cutin_acc.detector import CutInEvent, DetectorConfig, detect_cut_ins
from cutin_acc.errors import NotNormalized

from conftest import make_track
from oracles import brute_force_cut_ins


def keys(events):
    return {e.key for e in events}


def random_traffic(seed, max_tracks=10, max_frames=500):
    """Random lane-hopping traffic: partial coverage, ties and braking spells included."""
    rng = np.random.default_rng(seed)
    n_frames = int(rng.integers(60, max_frames + 1))
    tracks = {}
    for tid in range(1, int(rng.integers(2, max_tracks + 1)) + 1):
        start = int(rng.integers(1, max(2, n_frames // 3)))
        stop = int(rng.integers(min(start + 20, n_frames), n_frames + 1))
        n = stop - start + 1
        v = rng.uniform(15, 30) + np.cumsum(rng.normal(0, 0.05, n))
        a = rng.normal(0, 0.4, n)
        a[rng.random(n) < 0.05] = -1.0
        x = rng.uniform(0, 120) + np.cumsum(np.maximum(v, 0.5)) * 0.04
        if rng.random() < 0.1:
            x = np.round(x)  # encourages exact position ties
        lanes = np.full(n, int(rng.integers(1, 4)))
        for c in np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(0, 3)), replace=False)):
            lanes[c:] = int(rng.integers(1, 4))
        tracks[tid] = make_track(tid, np.arange(start, stop + 1), x, v=np.maximum(v, 0.5), a=a, lane=lanes, width=rng.choice([4.5, 12.0]))
    rec = ingest.Recording(seed, 25.0, tracks, lane_count=3)
    return ingest.normalize_direction(rec)


def test_requires_normalized_recording():
    gen = synth.generate(synth.cut_in_script(0, 1))
    with pytest.raises(NotNormalized):
        detect_cut_ins(gen.recording)


@pytest.mark.parametrize("seed", range(60))
def test_matches_brute_force_on_random_traffic(seed):
    rec = random_traffic(seed)
    assert keys(detect_cut_ins(rec)) == brute_force_cut_ins(rec)


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force_on_scripts(seed):
    script = synth.cut_in_script(seed, n_events=3, n_benign=2, duration_frames=300, reaction_lag=seed % 3 * 5)
    rec = ingest.normalize_direction(synth.generate(script).recording)
    assert keys(detect_cut_ins(rec)) == brute_force_cut_ins(rec)


def test_brute_force_finds_something():
    # guard against a vacuous equality above
    hits = sum(len(brute_force_cut_ins(random_traffic(s))) for s in range(60))
    assert hits > 10


@pytest.mark.parametrize("direction", [ingest.INCREASING, ingest.DECREASING])
@pytest.mark.parametrize("lag", [0, 10])
@pytest.mark.parametrize("seed", range(5))
def test_planted_events_recalled_exactly(seed, lag, direction):
    gen = synth.generate(synth.cut_in_script(seed, n_events=4, n_benign=2, reaction_lag=lag, direction=direction))
    found = detect_cut_ins(ingest.normalize_direction(gen.recording))
    assert keys(found) == keys(gen.events)
    assert len(gen.events) == 4


@pytest.mark.parametrize("seed", range(10))
def test_no_events_without_cut_ins(seed):
    for script in (synth.free_flow_script(seed), synth.cut_in_script(seed, n_events=0, n_benign=4)):
        rec = ingest.normalize_direction(synth.generate(script).recording)
        assert detect_cut_ins(rec) == []


def test_hand_built_event_fields():
    f = np.arange(1, 101)
    sv = make_track(1, f, 100 + 20 * 0.04 * (f - 1), v=20.0, a=np.where(f > 52, -1.2, 0.0), lane=2)
    pv = make_track(2, f, 115 + 20 * 0.04 * (f - 1), v=20.0, lane=np.where(f >= 50, 2, 3))
    rec = ingest.normalize_direction(ingest.Recording(7, 25.0, {1: sv, 2: pv}, lane_count=3))
    (ev,) = detect_cut_ins(rec)
    assert ev.key == (7, 1, 2, 50)
    assert (ev.lane_from, ev.lane_to) == (3, 2)
    assert ev.gap_at_cut_in == pytest.approx(15 - 4.5)
    assert ev.sv_min_accel_after == -1.2
    assert ev.window == (10, 90)


def test_window_must_be_covered():
    f = np.arange(1, 80)  # only 29 frames after a change at 50
    sv = make_track(1, f, 100 + 0.8 * (f - 1), a=-1.0, lane=2)
    pv = make_track(2, f, 115 + 0.8 * (f - 1), lane=np.where(f >= 50, 2, 3))
    rec = ingest.normalize_direction(ingest.Recording(1, 25.0, {1: sv, 2: pv}, lane_count=3))
    assert detect_cut_ins(rec) == []


def test_nearest_follower_chosen():
    f = np.arange(1, 101)
    far = make_track(1, f, 60 + 0.8 * (f - 1), a=-1.0, lane=2)
    near = make_track(3, f, 100 + 0.8 * (f - 1), a=-1.0, lane=2)
    pv = make_track(2, f, 115 + 0.8 * (f - 1), lane=np.where(f >= 50, 2, 3))
    rec = ingest.normalize_direction(ingest.Recording(1, 25.0, {1: far, 2: pv, 3: near}, lane_count=3))
    assert [e.sv_track_id for e in detect_cut_ins(rec)] == [3]


GRID = [(h, a) for h in (1.0, 2.0, 3.0) for a in (-0.3, -0.5, -1.0)]


@pytest.mark.parametrize("seed", range(15))
def test_threshold_monotonicity(seed):
    rec = random_traffic(seed + 100)
    found = {(h, a): keys(detect_cut_ins(rec, DetectorConfig(max_headway_s=h, min_sv_decel=a))) for h, a in GRID}
    for (h1, a1), (h2, a2) in [(p, q) for p in GRID for q in GRID]:
        if h1 <= h2 and a1 <= a2:  # p is at least as strict as q
            assert found[(h1, a1)] <= found[(h2, a2)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 4.0), st.floats(-2.0, -0.1))
def test_events_satisfy_predicate(seed, headway, decel):
    rec = random_traffic(seed, max_tracks=6, max_frames=200)
    cfg = DetectorConfig(max_headway_s=headway, min_sv_decel=decel)
    for ev in detect_cut_ins(rec, cfg):
        sv = rec.tracks[ev.sv_track_id]
        v = sv.x_velocity[sv.index(ev.cut_in_frame)]
        assert ev.gap_at_cut_in > cfg.min_gap_m
        assert ev.gap_at_cut_in / max(v, 0.1) < headway
        assert ev.sv_min_accel_after < decel


def test_events_sorted_by_frame_then_pv():
    found = []
    for s in range(40):
        found = detect_cut_ins(random_traffic(s))
        order = [(e.cut_in_frame, e.pv_track_id) for e in found]
        assert order == sorted(order)


def test_lane_change_count():
    f = np.arange(1, 11)
    a = make_track(1, f, 0.0, lane=[1, 1, 2, 2, 3, 3, 3, 2, 2, 2])
    b = make_track(2, f, 50.0, lane=2)
    rec = ingest.Recording(1, 25.0, {1: a, 2: b}, lane_count=3)
    assert detector.count_lane_changes(rec) == 3
    assert detector.lane_transitions(a) == [(3, 1, 2), (5, 2, 3), (8, 3, 2)]


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(max_headway_s=0)
    with pytest.raises(ValueError):
        DetectorConfig(min_sv_decel=0.1)


def test_event_file_round_trip(tmp_path):
    gen = synth.generate(synth.cut_in_script(3, n_events=5))
    events = detect_cut_ins(ingest.normalize_direction(gen.recording))
    detector.save_events(events, tmp_path / "events.csv")
    assert detector.load_events(tmp_path / "events.csv") == events
    assert detector.events_from_csv(detector.events_to_csv(gen.events)) == gen.events
    assert all(isinstance(e, CutInEvent) for e in events)
