import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import hold_last_predictor
from twinsync.dsp import Segment, reconstruct, sample_segment
from twinsync.nn import DenseNet
from twinsync.predictor import (
    PredictorModel, build_dataset, evaluate_predictor, make_predictor_net, predict, train_predictor,
)
from twinsync.signal import SynthSpec, Trajectory, synthesize_trace


def sinusoid(n, freq=1.0, amp=1.0):
    return Trajectory(amp * np.sin(2 * np.pi * freq * np.arange(n) / 1000))


def test_dataset_rows():
    ds = build_dataset(Trajectory(np.arange(30.0)), 10, 10)
    assert len(ds) == 11
    assert list(ds.history[3]) == list(np.arange(3.0, 13.0))
    assert list(ds.future[3]) == list(np.arange(13.0, 23.0))
    assert len(build_dataset(Trajectory(np.arange(20.0)), 10, 10)) == 1
    with pytest.raises(ValueError):
        build_dataset(Trajectory(np.arange(19.0)), 10, 10)


def test_dataset_constant_scale_floored():
    ds = build_dataset(Trajectory(np.full(40, 3.0)), 5, 5)
    assert ds.scale == 1.0 and ds.mean == 3.0
    assert np.all(ds.history == ds.history[0])


def test_constant_signal_learned():
    c = 2.0
    ds = build_dataset(Trajectory(np.full(200, c)), 10, 10)
    model = train_predictor(ds, epochs=20, batch=16, seed=0, hidden=(16, 16))
    out = predict(model, np.full(10, c), 10)
    assert np.max(np.abs(out - c)) <= abs(c) * 1e-2


def test_zero_epochs_keeps_initialization():
    ds = build_dataset(sinusoid(300), 20, 20)
    model = train_predictor(ds, epochs=0, seed=4, hidden=(8,))
    init = make_predictor_net(20, 20, (8,), np.random.default_rng(4))
    assert np.array_equal(model.net.params, init.params)
    assert np.isfinite(model.final_loss)


@pytest.mark.slow
def test_sinusoid_regression_bound():
    ds = build_dataset(sinusoid(4000), 200, 200)
    model = train_predictor(ds, epochs=50, seed=0, lr=3e-3)
    assert evaluate_predictor(model, ds) <= 1e-3


def test_zero_net_outputs_mean():
    model = PredictorModel(DenseNet([6, 4, 8], ["relu", "identity"]), 6, 8, mean=1.25, scale=3.0)
    for h in (1, 5, 8):
        assert np.all(predict(model, np.arange(6.0), h) == 1.25)


def test_full_horizon_and_bounds():
    model = hold_last_predictor(4, 6)
    assert predict(model, [0, 0, 0, 1.5], 6).shape == (6,)
    with pytest.raises(ValueError):
        predict(model, [0, 0, 0, 1], 7)
    with pytest.raises(ValueError):
        predict(model, [0, 0, 1], 3)


@pytest.mark.parametrize("mean,scale", [(0.0, 1.0), (2.5, 0.3)])
def test_hold_last_net(mean, scale):
    model = hold_last_predictor(5, 7, mean, scale)
    for last in (-3.0, 0.0, 4.2):
        out = predict(model, [9, 8, 7, 6, last], 7)
        assert np.allclose(out, last, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_prefix_consistency(h1, h2, seed):
    h1, h2 = min(h1, h2), max(h1, h2)
    rng = np.random.default_rng(seed)
    model = PredictorModel(make_predictor_net(5, 12, (8,), rng), 5, 12, 0.3, 2.0)
    x = rng.normal(size=5)
    long = predict(model, x, h2)
    assert np.array_equal(predict(model, x, h1), long[:h1])
    assert np.array_equal(predict(model, x, h2), long)


def test_full_rate_history_gives_identical_prediction():
    tr = synthesize_trace(SynthSpec(duration_slots=600, seed=5))
    model = PredictorModel(make_predictor_net(50, 20, (16,), np.random.default_rng(0)), 50, 20, 0.1, 0.8)
    hist = tr.samples[100:150]
    rec = reconstruct(sample_segment(Segment(hist), hist.size)).values
    assert np.array_equal(predict(model, hist, 20), predict(model, rec, 20))


def test_checkpoint_round_trip(tmp_path):
    ds = build_dataset(sinusoid(300), 10, 10)
    model = train_predictor(ds, epochs=1, hidden=(8,))
    model.save(tmp_path / "p.json")
    back = PredictorModel.load(tmp_path / "p.json")
    assert (back.l_in, back.h_max, back.mean, back.scale) == (model.l_in, model.h_max, model.mean, model.scale)
    assert back.net.params.tobytes() == model.net.params.tobytes()
