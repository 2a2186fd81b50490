import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutin_acc import dataset as ds
from cutin_acc import predictors as P
from cutin_acc import synth
from cutin_acc.dataset import FeatureRow, SequenceSample
from cutin_acc.errors import (
    CheckpointError,
    ConfigInvalid,
    DegenerateHorizon,
    EmptyDataset,
    EmptyTestWarning,
    NonFiniteLoss,
    UntrainedModel,
    WrongWindowLength,
)

from oracles import grid_search_mpc, rollout_cost

# --- MPC -----------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.0, 300.0),
    st.floats(1.0, 80.0),
    st.floats(0.0, 40.0),
    st.floats(0.0, 40.0),
)
def test_mpc_matches_grid_search(x_sv, gap, v_sv, v_pv):
    cfg = P.MpcConfig()
    got = P.mpc_predict((x_sv, x_sv + gap, v_sv, v_pv, 0.0), cfg)
    want = grid_search_mpc(x_sv, v_sv, x_sv + gap, v_pv, cfg)
    assert got == pytest.approx(want, abs=1e-6)
    assert cfg.a_min <= got <= cfg.a_max


@pytest.mark.parametrize("horizon, w_accel", [(1, 0.1), (5, 0.0), (40, 2.0)])
def test_mpc_is_the_cost_minimizer(horizon, w_accel):
    cfg = P.MpcConfig(horizon=horizon, w_accel=w_accel)
    rng = np.random.default_rng(horizon)
    for _ in range(20):
        x_sv, gap, v_sv, v_pv = rng.uniform(0, 100), rng.uniform(2, 60), rng.uniform(5, 35), rng.uniform(5, 35)
        a = P.mpc_predict((x_sv, x_sv + gap, v_sv, v_pv), cfg)
        c = rollout_cost(a, x_sv, v_sv, x_sv + gap, v_pv, cfg)
        for other in np.linspace(cfg.a_min, cfg.a_max, 61):
            assert c <= rollout_cost(other, x_sv, v_sv, x_sv + gap, v_pv, cfg) + 1e-9


def test_mpc_equilibrium_is_zero():
    # gap equal to the headway distance and matched speeds: nothing to correct
    assert P.mpc_predict((0.0, 1.5 * 20.0, 20.0, 20.0), P.MpcConfig()) == pytest.approx(0.0, abs=1e-12)


def test_mpc_directions():
    cfg = P.MpcConfig()
    assert P.mpc_predict((0.0, 5.0, 25.0, 25.0), cfg) == cfg.a_min  # far too close
    assert P.mpc_predict((0.0, 200.0, 20.0, 25.0), cfg) == cfg.a_max  # far too loose
    a1 = P.mpc_predict((0.0, 25.0, 20.0, 20.0), cfg)
    a2 = P.mpc_predict((0.0, 28.0, 20.0, 20.0), cfg)
    assert a1 < a2 < 0


def test_mpc_accepts_feature_rows_and_windows():
    cfg = P.MpcConfig()
    row = FeatureRow(10.0, 40.0, 20.0, 22.0, 30.0, 0.0)
    a = P.mpc_predict(row, cfg)
    win = np.tile([1.0, 2.0, 3.0, 4.0, 5.0], (20, 1))
    win[-1] = row.inputs
    m = P.MpcPredictor(cfg, window_length=20)
    assert m.predict(win) == a
    assert np.array_equal(m.predict_batch(np.stack([win, win])), [a, a])
    with pytest.raises(WrongWindowLength):
        m.predict_batch(np.zeros((1, 19, 5)))


def test_mpc_degenerate_horizon():
    with pytest.raises(DegenerateHorizon):
        P.mpc_predict((0, 10, 10, 10), P.MpcConfig(horizon=0))


def test_mpc_config_validation():
    with pytest.raises(ConfigInvalid):
        P.MpcConfig(w_gap=-1)
    with pytest.raises(ConfigInvalid):
        P.MpcConfig(a_min=1.0)


# --- configs -------------------------------------------------------------------------


def test_train_config_validation():
    for bad in (dict(max_epochs=0), dict(lr=0), dict(patience=0), dict(batch_size=0)):
        with pytest.raises(ConfigInvalid):
            P.TrainConfig(**bad)


def test_lstm_layer_stack():
    m = P.LstmPredictor(P.LstmNetConfig(hidden=6), seed=0)
    kinds = [layer.kind for layer in m.net.layers]
    assert kinds == ["sequence_input", "fc", "relu", "lstm", "fc", "relu", "fc", "regression"]
    with pytest.raises(ConfigInvalid):
        P.LstmNetConfig(layers=("input", "fc", "fc_out"))
    with pytest.raises(ConfigInvalid):
        P.LstmNetConfig(layers=("input", "lstm", "banana", "fc_out"))


def test_ann_layer_stack():
    m = P.AnnPredictor(P.AnnConfig(width=7), seed=0)
    dense = [layer for layer in m.net.layers if layer.kind == "fc"]
    assert [d.n_in for d in dense] == [100, 7, 7, 7, 7, 7]
    assert dense[-1].n_out == 1


def test_seeded_init_is_deterministic():
    a = P.LstmPredictor(P.LstmNetConfig(hidden=5), seed=3).parameters()
    b = P.LstmPredictor(P.LstmNetConfig(hidden=5), seed=3).parameters()
    c = P.LstmPredictor(P.LstmNetConfig(hidden=5), seed=4).parameters()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)
    lstm_b = a["3.b"]
    assert np.all(lstm_b[5:10] == 1.0) and np.all(lstm_b[:5] == 0)


# --- training ------------------------------------------------------------------------


def _split(samples, seed=0):
    return ds.split_dataset(samples, 0.8, seed)


def _const_samples(n_events=20, T=4, value=1.7, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for e in range(n_events):
        for k in range(6):
            out.append(SequenceSample(rng.normal(size=(T, 5)), value + 0.1 * rng.normal(), (1, e, e + 1, 50), k))
    return out


def test_untrained_model_refuses_to_predict():
    m = P.AnnPredictor(P.AnnConfig(window_length=4, width=4), seed=0)
    with pytest.raises(UntrainedModel):
        m.predict(np.zeros((4, 5)))
    with pytest.raises(UntrainedModel):
        P.AnnPredictor(P.AnnConfig(window_length=4), seed=None).predict_batch(np.zeros((1, 4, 5)))


@pytest.mark.parametrize("kind", ["lstm", "ann"])
def test_training_learns_mean(kind):
    split = _split(_const_samples())
    m = (
        P.LstmPredictor(P.LstmNetConfig(hidden=8, window_length=4), seed=0)
        if kind == "lstm"
        else P.AnnPredictor(P.AnnConfig(window_length=4, width=8), seed=0)
    )
    m, trace = P.train(m, split, P.TrainConfig(lr=1e-2, max_epochs=30, patience=30))
    Xp, yp = split.physical("test")
    pred = m.predict_batch(Xp)
    assert np.sqrt(np.mean((pred - yp) ** 2)) < 0.2
    assert len(trace.epochs) == 30 and trace.stop_reason == "max_epochs"
    assert trace.iterations[-1] == 30 * math.ceil(len(split.train) / 32)


def test_training_is_deterministic():
    split = _split(_const_samples(seed=2))
    runs = []
    for _ in range(2):
        m = P.LstmPredictor(P.LstmNetConfig(hidden=4, window_length=4), seed=1)
        m, tr = P.train(m, split, P.TrainConfig(lr=1e-3, max_epochs=3))
        runs.append((m.to_bytes(), tr.val_rmse))
    assert runs[0] == runs[1]


def test_training_rejects_bad_input():
    m = P.AnnPredictor(P.AnnConfig(window_length=4, width=4), seed=0)
    with pytest.warns(EmptyTestWarning):
        split = _split(_const_samples(n_events=1))
    with pytest.raises(EmptyDataset):
        P.train(m, split, P.TrainConfig())
    other = _split(_const_samples(T=5))
    with pytest.raises(WrongWindowLength):
        P.train(m, other, P.TrainConfig())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    samples = _const_samples()
    split = _split(samples)
    m = P.AnnPredictor(P.AnnConfig(window_length=4, width=4), seed=0)
    m.parameters()["2.weight"][0, 0] = np.inf
    with pytest.raises(NonFiniteLoss):
        P.train(m, split, P.TrainConfig(max_epochs=2))


class ScriptedValidation:
    """Feeds a fixed validation sequence and records the weights seen at each epoch."""

    def __init__(self, values):
        self.values = list(values)
        self.seen = []

    def __call__(self, model):
        self.seen.append(model.snapshot())
        return self.values[len(self.seen) - 1]


@pytest.mark.parametrize(
    "values, stop_epoch, best_epoch",
    [
        ([1.0, 0.8, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1], 7, 2),
        ([0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.1], 6, 1),
        ([1.0, 0.9, 0.8, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.1], 9, 4),
        ([1.0, 0.9, 0.9, 0.9, 0.9, 0.85, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1], 11, 6),
    ],
)
def test_early_stopping_contract(values, stop_epoch, best_epoch):
    split = _split(_const_samples())
    m = P.AnnPredictor(P.AnnConfig(window_length=4, width=4), seed=0)
    val = ScriptedValidation(values)
    m, trace = P.train(m, split, P.TrainConfig(lr=1e-3, patience=5, max_epochs=50), val_metric=val)
    assert trace.epochs[-1] == stop_epoch
    assert trace.stop_reason == "patience"
    assert trace.best_epoch == best_epoch
    best = val.seen[best_epoch - 1]
    assert all(np.array_equal(v, best[k]) for k, v in m.parameters().items())
    assert trace.val_rmse == values[:stop_epoch]


def test_early_stopping_helper():
    es = P.EarlyStopping(patience=2)
    assert not es.update(1, 1.0, "a")
    assert not es.update(2, 1.0)
    assert es.update(3, 2.0)
    assert (es.best, es.best_epoch, es.best_state) == (1.0, 1, "a")


def test_on_epoch_callback_and_trace_csv():
    split = _split(_const_samples())
    m = P.AnnPredictor(P.AnnConfig(window_length=4, width=4), seed=0)
    seen = []
    m, trace = P.train(m, split, P.TrainConfig(max_epochs=3), on_epoch=lambda e, tr, va: seen.append(e))
    assert seen == [1, 2, 3]
    lines = trace.to_csv("ann").splitlines()
    assert lines[0] == "model,epoch,iterations,train_rmse,val_rmse" and len(lines) == 4


# --- checkpoints -----------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["lstm", "ann"])
def test_checkpoint_round_trip(tmp_path, kind):
    split = _split(_const_samples())
    m = (
        P.LstmPredictor(P.LstmNetConfig(hidden=6, window_length=4), seed=0)
        if kind == "lstm"
        else P.AnnPredictor(P.AnnConfig(window_length=4, width=6), seed=0)
    )
    m, _ = P.train(m, split, P.TrainConfig(max_epochs=2))
    path = tmp_path / f"{kind}.ckpt"
    m.save(path)
    back = P.load_model(path)
    assert type(back) is type(m) and back.config == m.config
    Xp, _ = split.physical("test")
    assert np.array_equal(back.predict_batch(Xp), m.predict_batch(Xp))
    assert back.to_bytes() == m.to_bytes()


def test_checkpoint_architecture_mismatch():
    a = P.AnnPredictor(P.AnnConfig(window_length=4, width=6), seed=0)
    b = P.AnnPredictor(P.AnnConfig(window_length=4, width=5), seed=0)
    with pytest.raises(CheckpointError):
        b.load_arrays(a.to_bytes())
    lstm = P.LstmPredictor(P.LstmNetConfig(hidden=6, window_length=4), seed=0)
    with pytest.raises(CheckpointError):
        lstm.load_arrays(a.to_bytes())


def test_wrong_window_length_on_predict():
    split = _split(_const_samples())
    m, _ = P.train(P.AnnPredictor(P.AnnConfig(window_length=4, width=4), seed=0), split, P.TrainConfig(max_epochs=1))
    with pytest.raises(WrongWindowLength):
        m.predict(np.zeros((5, 5)))
    with pytest.raises(WrongWindowLength):
        m.predict_batch(np.zeros((2, 3, 5)))


def test_linear_corpus_is_learnable_quickly():
    samples, w = synth.linear_corpus(0, 40, T=5)
    split = _split(samples)
    m = P.LstmPredictor(P.LstmNetConfig(hidden=8, window_length=5), seed=0)
    m, trace = P.train(m, split, P.TrainConfig(lr=1e-2, max_epochs=15, patience=15))
    assert trace.best_val_rmse < 0.3 * trace.val_rmse[0]
