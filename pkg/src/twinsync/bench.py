"""Benchmarks: full-rate baseline, fixed (W, n) policies, exhaustive search, CCDF, trade-off sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .channel import ChannelConfig
from .env import Action, EnvConfig, SyncEnv
from .kctd3 import KCTD3Agent, evaluate_policy
from .predictor import PredictorModel
from .signal import Trajectory

BASELINE_WINDOW = 50


class InfeasibleError(ValueError):
    """No grid point meets the error threshold."""

    def __init__(self, gamma_c: float, best_error: float, best_point: tuple[int, int]):
        super().__init__(f"no grid point has avg_error <= {gamma_c:g}; best is {best_error:g} at (W, n) = {best_point}")
        self.gamma_c = gamma_c
        self.best_error = best_error
        self.best_point = best_point


def ccdf(error_series) -> tuple[np.ndarray, np.ndarray]:
    """Empirical P(error > x) at every distinct x, x ascending."""
    e = np.sort(np.asarray(error_series, dtype=float))
    if e.size == 0:
        raise ValueError("empty error series")
    xs, first = np.unique(e, return_index=True)
    # count of samples strictly above xs[i] is size - (index of first larger value)
    upper = np.append(first[1:], e.size)
    return xs, (e.size - upper) / e.size


def ccdf_at(error_series, x: float) -> float:
    e = np.asarray(error_series, dtype=float)
    if e.size == 0:
        raise ValueError("empty error series")
    return float(np.count_nonzero(e > x)) / e.size


@dataclass
class EvalReport:
    normalized_load: float
    avg_error: float
    error_series: np.ndarray
    load_series: np.ndarray | None = None
    fingerprint: str = ""
    label: str = ""
    outages: int = 0

    @property
    def ccdf(self):
        return ccdf(self.error_series)

    def tail(self, x: float) -> float:
        return ccdf_at(self.error_series, x)

    def summary(self) -> dict:
        return {"label": self.label, "normalized_load": self.normalized_load, "avg_error": self.avg_error,
                "segments": int(self.error_series.size), "outages": self.outages,
                "fingerprint": self.fingerprint}


def _comment(fh, fingerprint: str | None) -> None:
    if fingerprint:
        fh.write(f"# fingerprint: {fingerprint}\n")


def write_series_csv(path, report: EvalReport, fingerprint: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _comment(fh, fingerprint)
        w = csv.writer(fh, lineterminator="\n")
        if report.load_series is not None:
            w.writerow(["segment", "load", "error"])
            for i, (ld, e) in enumerate(zip(report.load_series, report.error_series)):
                w.writerow([i, repr(float(ld)), repr(float(e))])
        else:
            w.writerow(["segment", "error"])
            for i, e in enumerate(report.error_series):
                w.writerow([i, repr(float(e))])


def write_ccdf_csv(path, report: EvalReport, fingerprint: str | None = None) -> None:
    xs, ps = report.ccdf
    with open(path, "w", newline="") as fh:
        _comment(fh, fingerprint)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "probability"])
        for x, p in zip(xs, ps):
            w.writerow([repr(float(x)), repr(float(p))])


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_baseline(traj: Trajectory, e2e_delay: int, window: int = BASELINE_WINDOW) -> EvalReport:
    """Every sample sent, no prediction: the twin shows the trace ``e2e_delay`` slots late."""
    x = traj.samples
    if not 0 <= e2e_delay < x.size:
        raise ValueError("delay must be non-negative and shorter than the trajectory")
    truth = x[e2e_delay:]
    shown = x[:x.size - e2e_delay]
    n_win = truth.size // window
    if n_win == 0:
        raise ValueError("trajectory too short for one baseline window")
    d = (truth[:n_win * window] - shown[:n_win * window]).reshape(n_win, window)
    series = np.mean(d * d, axis=1)
    return EvalReport(1.0, float(series.mean()), series, np.ones(n_win), label=f"baseline_d{e2e_delay}")


@dataclass
class EnvSettings:
    """Everything besides the trajectory and channel needed to build an environment."""

    predictor: PredictorModel
    w_max: int = 100
    warmup_w: int = 50
    warmup_n: int = 50
    gamma: float = 0.99

    def make(self, traj: Trajectory, channel: ChannelConfig, rng: np.random.Generator) -> SyncEnv:
        cfg = EnvConfig(traj, channel, self.predictor, self.w_max, self.gamma, self.warmup_w,
                        max(self.warmup_n, max(2, channel.n_min)))
        return SyncEnv(cfg, rng)


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def run_fixed_policy(traj: Trajectory, W: int, n: int, channel: ChannelConfig, settings: EnvSettings,
                     repeats: int = 10, seed: int = 0) -> EvalReport:
    """Constant action ``(W, n)`` for one pass over the trace, averaged over seeded repeats.

    Without packet loss every repeat is identical, so a single pass is run.
    """
    n_floor = max(2, channel.n_min)
    if not channel.d_max <= W <= settings.w_max or not n_floor <= n <= W:
        raise ValueError(f"invalid fixed policy (W={W}, n={n})")
    runs = 1 if channel.p_loss == 0.0 else repeats
    errors, loads, per_run_err, per_run_load, outages = [], [], [], [], 0
    for r in range(runs):
        env = settings.make(traj, channel, _stream(seed, W, n, r))
        out = env.reset()
        costs, lds = [], []
        while not out.done:
            out = env.step(Action(W, n))
            costs.append(out.cost)
            lds.append(out.info["load"])
            outages += int(out.info["outage"])
        errors.extend(costs)
        loads.extend(lds)
        per_run_err.append(np.mean(costs))
        per_run_load.append(np.mean(lds))
    return EvalReport(float(np.mean(per_run_load)), float(np.mean(per_run_err)), np.array(errors),
                      np.array(loads), label=f"fixed_W{W}_n{n}", outages=outages)


def default_grid(channel: ChannelConfig, w_max: int = 100, w_step: int = 10, n_step: int = 2):
    n_floor = max(2, channel.n_min)
    ws = range(max(w_step, channel.d_max), w_max + 1, w_step)
    return [(W, n) for W in ws for n in range(2, W + 1, n_step) if n >= n_floor]


@dataclass
class SurfacePoint:
    W: int
    n: int
    report: EvalReport

    @property
    def load(self) -> float:
        return self.report.normalized_load

    @property
    def error(self) -> float:
        return self.report.avg_error


def fixed_policy_surface(traj: Trajectory, channel: ChannelConfig, settings: EnvSettings,
                         grid=None, repeats: int = 10, seed: int = 0) -> list[SurfacePoint]:
    grid = default_grid(channel, settings.w_max) if grid is None else list(grid)
    if not grid:
        raise ValueError("empty grid")
    return [SurfacePoint(W, n, run_fixed_policy(traj, W, n, channel, settings, repeats, seed)) for W, n in grid]


def exhaustive_search(surface: list[SurfacePoint], gamma_c: float) -> tuple[int, int, EvalReport]:
    """Lowest-load grid point with ``avg_error <= gamma_c`` (ties: lower error, then larger W)."""
    if not surface:
        raise ValueError("empty surface")
    feasible = [p for p in surface if p.error <= gamma_c]
    if not feasible:
        best = min(surface, key=lambda p: p.error)
        raise InfeasibleError(gamma_c, best.error, (best.W, best.n))
    # loads are measured sample/slot ratios, so equal n/W can differ in the last bits
    win = min(feasible, key=lambda p: (round(p.load, 9), p.error, -p.W))
    return win.W, win.n, win.report


def surface_percentile(surface: list[SurfacePoint], q: float) -> float:
    return float(np.percentile([p.error for p in surface], q))


def write_surface_csv(path, surface: list[SurfacePoint], fingerprint: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _comment(fh, fingerprint)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["W", "n", "normalized_load", "avg_error"])
        for p in surface:
            w.writerow([p.W, p.n, repr(p.load), repr(p.error)])


def evaluate_agent(agent: KCTD3Agent, traj: Trajectory, channel: ChannelConfig, settings: EnvSettings,
                   repeats: int = 1, seed: int = 0, step_rows: list | None = None) -> EvalReport:
    """Noise-free rollouts of a trained agent, averaged over seeded channel realisations."""
    runs = 1 if channel.p_loss == 0.0 else repeats
    errors, loads, per_err, per_load, outages = [], [], [], [], 0
    for r in range(runs):
        env = settings.make(traj, channel, _stream(seed, r))
        lds, costs, outs = evaluate_policy(agent, env, step_rows=step_rows if r == 0 else None)
        errors.extend(costs)
        loads.extend(lds)
        per_err.append(costs.mean())
        per_load.append(lds.mean())
        outages += outs
    return EvalReport(float(np.mean(per_load)), float(np.mean(per_err)), np.array(errors), np.array(loads),
                      label="kctd3", outages=outages)


@dataclass
class TradeoffRow:
    gamma_c: float
    p_loss: float
    normalized_load: float
    avg_error: float


def tradeoff_sweep(traj: Trajectory, gamma_c_list, p_loss_list, settings: EnvSettings,
                   agents: Mapping | Callable, channel: ChannelConfig | None = None,
                   repeats: int = 1, seed: int = 0) -> list[TradeoffRow]:
    """Evaluate one trained agent per (gamma_c, p_loss).

    ``agents`` is either a mapping keyed by ``(gamma_c, p_loss)`` or a
    callable ``(gamma_c, p_loss) -> agent`` that trains on demand.
    """
    gamma_c_list, p_loss_list = list(gamma_c_list), list(p_loss_list)
    if not gamma_c_list or not p_loss_list:
        raise ValueError("gamma_c_list and p_loss_list must be non-empty")
    if not callable(agents) and not agents:
        raise ValueError("no agents supplied")
    base = channel or ChannelConfig()
    rows = []
    for p in p_loss_list:
        ch = ChannelConfig(base.d_max, base.d_forward, base.d_feedback, p, base.outage_target, base.seed)
        for g in gamma_c_list:
            if callable(agents):
                agent = agents(g, p)
            else:
                if (g, p) not in agents:
                    raise KeyError(f"no trained agent for gamma_c={g}, p_loss={p}")
                agent = agents[(g, p)]
            rep = evaluate_agent(agent, traj, ch, settings, repeats, seed)
            rows.append(TradeoffRow(g, p, rep.normalized_load, rep.avg_error))
    return rows


def write_tradeoff_csv(path, rows: list[TradeoffRow], fingerprint: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _comment(fh, fingerprint)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma_c", "p_loss", "normalized_load", "avg_error"])
        for r in rows:
            w.writerow([repr(r.gamma_c), repr(r.p_loss), repr(r.normalized_load), repr(r.avg_error)])
