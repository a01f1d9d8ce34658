import math

import numpy as np
import pytest

from twinsync.signal import (
    SynthSpec, TraceError, Trajectory, autocorrelation, estimate_decorrelation_time,
    load_trace, save_trace, synthesize_trace,
)


def brute_acf(x, lag):
    d = [v - sum(x) / len(x) for v in x]
    num = sum(d[t] * d[t + lag] for t in range(len(d) - lag))
    return num / sum(v * v for v in d)


def test_load_plain_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("0.0\n0.1\n0.2\n")
    tr = load_trace(p)
    assert len(tr) == 3
    assert tr.samples[1] == 0.1
    assert tr.origin_slot == 0 and tr.slot_duration == 1.0


def test_load_header_skipped(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("angle\n1.5\n")
    tr = load_trace(p)
    assert list(tr.samples) == [1.5]


def test_load_crlf(tmp_path):
    p = tmp_path / "t.csv"
    p.write_bytes(b"angle\r\n1.0\r\n2.0\r\n")
    assert list(load_trace(p).samples) == [1.0, 2.0]


def test_load_bad_row_cites_line(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("angle\n1.0\n2.0\nabc\n")
    with pytest.raises(TraceError, match="line 4"):
        load_trace(p)


def test_load_empty(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("")
    with pytest.raises(TraceError):
        load_trace(p)


def test_round_trip_exact(tmp_path):
    tr = synthesize_trace(SynthSpec(duration_slots=500, seed=3))
    p = tmp_path / "t.csv"
    save_trace(tr, p)
    assert np.array_equal(load_trace(p).samples, tr.samples)


def test_slot_access_out_of_range():
    tr = Trajectory(np.arange(5.0), origin_slot=10)
    assert tr.at(12) == 2.0
    with pytest.raises(IndexError):
        tr.at(9)
    with pytest.raises(IndexError):
        tr.at(15)


def test_synth_quarter_period():
    tr = synthesize_trace(SynthSpec(components=((1.0, 1.0, 0.0),), noise_std=0.0, duration_slots=1000))
    assert tr.samples[250] == pytest.approx(1.0, abs=1e-12)


def test_synth_empty_sum():
    tr = synthesize_trace(SynthSpec(components=(), noise_std=0.0, duration_slots=50))
    assert not tr.samples.any()


def test_synth_deterministic():
    a = synthesize_trace(SynthSpec(seed=7, duration_slots=2000))
    b = synthesize_trace(SynthSpec(seed=7, duration_slots=2000))
    assert np.array_equal(a.samples, b.samples)
    c = synthesize_trace(SynthSpec(seed=8, duration_slots=2000))
    assert not np.array_equal(a.samples, c.samples)


def test_synth_rejects_nyquist():
    with pytest.raises(TraceError):
        synthesize_trace(SynthSpec(components=((1.0, 500.0, 0.0),)))


def test_default_synth_length():
    assert len(synthesize_trace(SynthSpec())) == 20_000


def test_acf_matches_brute_force():
    x = synthesize_trace(SynthSpec(duration_slots=300, seed=1)).samples
    rho = autocorrelation(x)
    for lag in (1, 7, 50, 299):
        assert rho[lag] == pytest.approx(brute_acf(list(x), lag), abs=1e-12)


def test_decorrelation_sinusoid_period_600():
    # closed form cos(2*pi*lag/600) reaches 0.5 at lag 100; the 1/N estimator on a
    # 20 000-slot trace first dips under it there
    assert math.cos(2 * math.pi * 99 / 600) > 0.5 > math.cos(2 * math.pi * 101 / 600)
    x = np.sin(2 * np.pi * np.arange(20_000) / 600)
    scan = [brute_acf(list(x[:20_000]), lag) for lag in (99, 100)]
    assert scan[0] >= 0.5 > scan[1]
    assert estimate_decorrelation_time(Trajectory(x), 0.5) == 100


def test_decorrelation_white_noise():
    x = np.random.default_rng(11).normal(size=5000)
    assert brute_acf(list(x), 1) < 0.5
    assert estimate_decorrelation_time(Trajectory(x), 0.5) == 1


def test_decorrelation_constant_rejected():
    with pytest.raises(TraceError):
        estimate_decorrelation_time(Trajectory(np.full(100, 3.0)))


def test_decorrelation_offset_invariant():
    tr = synthesize_trace(SynthSpec(duration_slots=4000, seed=2))
    shifted = Trajectory(tr.samples + 17.5)
    assert estimate_decorrelation_time(tr) == estimate_decorrelation_time(shifted)
