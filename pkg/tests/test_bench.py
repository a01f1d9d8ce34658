import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import hold_last_predictor
from twinsync.bench import (
    EnvSettings, EvalReport, InfeasibleError, SurfacePoint, ccdf, ccdf_at, default_grid, evaluate_agent,
    exhaustive_search, fixed_policy_surface, run_baseline, run_fixed_policy, surface_percentile,
    tradeoff_sweep, write_ccdf_csv, write_json, write_series_csv, write_surface_csv,
)
from twinsync.channel import ChannelConfig
from twinsync.kctd3 import AgentConfig, KCTD3Agent
from twinsync.signal import SynthSpec, Trajectory, synthesize_trace


def short_trace(n=3000, seed=4):
    return synthesize_trace(SynthSpec(duration_slots=n, seed=seed))


HOLD = EnvSettings(hold_last_predictor(5, 200))


def test_ccdf_examples():
    xs, ps = ccdf([2.0, 2.0, 2.0])
    assert list(xs) == [2.0] and list(ps) == [0.0]
    assert ccdf_at([2.0, 2.0, 2.0], 2.0 - 1e-9) == 1.0
    assert ccdf_at([1, 2, 3, 4], 2.5) == 0.5
    xs, ps = ccdf([1, 2, 3, 4])
    assert list(ps) == [0.75, 0.5, 0.25, 0.0]
    assert ccdf_at([5.0], 4.9) == 1.0 and ccdf_at([5.0], 5.0) == 0.0
    with pytest.raises(ValueError):
        ccdf([])


@settings(max_examples=200)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=60))
def test_ccdf_monotone_and_consistent(series):
    xs, ps = ccdf(series)
    assert np.all(np.diff(xs) > 0) and np.all(np.diff(ps) <= 0)
    assert ps[0] <= 1 and ps[-1] == 0
    for x, p in zip(xs, ps):
        assert p == ccdf_at(series, x)


def test_baseline_sinusoid_closed_form():
    d = 50
    closed = 1 - np.cos(2 * np.pi * 1.0 * d / 1000)
    # independent numerical integration over one period
    t = np.linspace(0, 1, 200_001)
    integrand = (np.sin(2 * np.pi * t) - np.sin(2 * np.pi * (t - d / 1000))) ** 2
    assert np.trapezoid(integrand, t) == pytest.approx(closed, rel=1e-6)
    assert closed == pytest.approx(0.0489, abs=1e-4)
    tr = Trajectory(np.sin(2 * np.pi * np.arange(20_000) / 1000))
    rep = run_baseline(tr, d)
    assert rep.normalized_load == 1.0
    assert rep.avg_error == pytest.approx(closed, rel=0.02)


def test_baseline_trivial_cases():
    tr = short_trace()
    assert run_baseline(tr, 0).avg_error == 0.0
    assert run_baseline(Trajectory(np.full(500, 2.0)), 30).avg_error == 0.0
    with pytest.raises(ValueError):
        run_baseline(tr, len(tr))


def test_fixed_policy_constant_full_rate():
    rep = run_fixed_policy(Trajectory(np.full(2000, 1.0)), 40, 40, ChannelConfig(), HOLD)
    assert rep.avg_error == 0.0 and rep.normalized_load == 1.0


def test_fixed_policy_load_exact():
    rep = run_fixed_policy(short_trace(), 30, 7, ChannelConfig(p_loss=0.1), HOLD, repeats=3)
    assert rep.normalized_load == pytest.approx(7 / 30, abs=1e-12)
    assert np.all(rep.load_series == 7 / 30)


def test_fixed_policy_rejects_bad_point():
    for W, n in ((5, 2), (101, 2), (20, 21), (20, 1)):
        with pytest.raises(ValueError):
            run_fixed_policy(short_trace(), W, n, ChannelConfig(), HOLD)


def test_fixed_policy_repeats_deterministic():
    a = run_fixed_policy(short_trace(), 20, 8, ChannelConfig(p_loss=0.1), HOLD, repeats=4, seed=3)
    b = run_fixed_policy(short_trace(), 20, 8, ChannelConfig(p_loss=0.1), HOLD, repeats=4, seed=3)
    assert a.avg_error == b.avg_error and a.error_series.size == 4 * b.error_series.size // 4


def test_fixed_policy_more_samples_less_error(default_trace, default_predictor):
    s = EnvSettings(default_predictor)
    few = run_fixed_policy(default_trace, 50, 4, ChannelConfig(), s)
    many = run_fixed_policy(default_trace, 50, 25, ChannelConfig(), s)
    assert few.avg_error > many.avg_error


@pytest.fixture(scope="module")
def small_surface():
    grid = default_grid(ChannelConfig(), 100, 10, 4)
    return fixed_policy_surface(short_trace(), ChannelConfig(), HOLD, grid)


def test_default_grid_shape():
    g = default_grid(ChannelConfig())
    assert g[0] == (10, 2) and g[-1] == (100, 100)
    assert len(g) == sum(W // 2 for W in range(10, 101, 10))
    assert all(n >= 7 for _, n in default_grid(ChannelConfig(p_loss=0.1)))


def test_exhaustive_unconstrained(small_surface):
    W, n, _ = exhaustive_search(small_surface, float("inf"))
    assert (W, n) == (100, 2)


def test_exhaustive_infeasible(small_surface):
    best = min(p.error for p in small_surface)
    with pytest.raises(InfeasibleError) as err:
        exhaustive_search(small_surface, best / 2)
    assert err.value.best_error == best


def test_exhaustive_median_is_optimal(small_surface):
    g = surface_percentile(small_surface, 50)
    W, n, rep = exhaustive_search(small_surface, g)
    assert rep.avg_error <= g
    assert not any(p.error <= g and p.load < rep.normalized_load - 1e-12 for p in small_surface)


def test_exhaustive_equal_load_prefers_lower_error():
    def point(W, n, load, err):
        return SurfacePoint(W, n, EvalReport(load, err, np.array([err])))
    pts = [point(80, 4, 0.05, 0.9), point(40, 2, 0.05000000000000001, 0.2), point(60, 2, 0.0333, 5.0)]
    W, n, _ = exhaustive_search(pts, 1.0)
    assert (W, n) == (40, 2)


def test_report_writers(tmp_path, small_surface):
    rep = small_surface[3].report
    write_series_csv(tmp_path / "s.csv", rep, "fp")
    write_ccdf_csv(tmp_path / "c.csv", rep, "fp")
    write_surface_csv(tmp_path / "g.csv", small_surface, "fp")
    write_json(tmp_path / "r.json", rep.summary())
    for name in ("s.csv", "c.csv", "g.csv"):
        assert (tmp_path / name).read_text().startswith("# fingerprint: fp\n")
    assert json.loads((tmp_path / "r.json").read_text())["avg_error"] == rep.avg_error


def tiny_agent():
    return KCTD3Agent(AgentConfig(gamma_c=1e-3, hidden=(8,)), 1)


def test_tradeoff_single_row():
    rows = tradeoff_sweep(short_trace(), [1e-3], [0.0], HOLD, {(1e-3, 0.0): tiny_agent()})
    assert len(rows) == 1
    rep = evaluate_agent(tiny_agent(), short_trace(), ChannelConfig(), HOLD)
    assert (rows[0].normalized_load, rows[0].avg_error) == (rep.normalized_load, rep.avg_error)


def test_tradeoff_errors():
    with pytest.raises(ValueError):
        tradeoff_sweep(short_trace(), [1e-3], [0.0], HOLD, {})
    with pytest.raises(KeyError):
        tradeoff_sweep(short_trace(), [1e-3], [0.1], HOLD, {(1e-3, 0.0): tiny_agent()})
    with pytest.raises(ValueError):
        tradeoff_sweep(short_trace(), [], [0.0], HOLD, {(1e-3, 0.0): tiny_agent()})


def test_tradeoff_callable_trains_on_demand():
    calls = []

    def make(g, p):
        calls.append((g, p))
        return tiny_agent()

    rows = tradeoff_sweep(short_trace(), [1e-3, 2e-3], [0.0, 0.01], HOLD, make)
    assert calls == [(1e-3, 0.0), (2e-3, 0.0), (1e-3, 0.01), (2e-3, 0.01)]
    assert [(r.gamma_c, r.p_loss) for r in rows] == calls
