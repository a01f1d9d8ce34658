"""Segment-level environment: sample, transmit, reconstruct, predict, score.

One step consumes one trajectory segment chosen by the action ``(W, n)``.
The receiver appends the segment's reconstruction to its history buffer and
the prediction for the segment is made from the history that ends where the
segment starts. The step cost is the MSE between the true segment and that
prediction; the reward is minus the sampling rate ``n / W``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig, transmit
from .dsp import Segment, mse, reconstruct, sample_segment
from .predictor import PredictorModel, predict
from .signal import Trajectory


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    w_next: int
    n_next: int


@dataclass
class EnvConfig:
    trajectory: Trajectory
    channel: ChannelConfig
    predictor: PredictorModel
    w_max: int = 100
    gamma: float = 0.99
    warmup_w: int = 50
    warmup_n: int = 50

    def __post_init__(self):
        if not self.channel.d_max <= self.w_max:
            raise ValueError("need d_max <= w_max")
        if 2 * self.w_max > self.predictor.h_max:
            raise ValueError(f"predictor horizon {self.predictor.h_max} cannot cover two segments of {self.w_max}")
        if self.warmup_w < self.w_min or self.warmup_n > self.warmup_w:
            raise ValueError("warmup segment must satisfy d_max <= W0 and n0 <= W0")
        if self.warmup_n < max(2, self.channel.n_min):
            raise ValueError("warmup n0 below the outage sample floor")

    @property
    def w_min(self) -> int:
        return self.channel.d_max

    @property
    def n_min(self) -> int:
        return max(2, self.channel.n_min)

    @property
    def l_in(self) -> int:
        return self.predictor.l_in

    @property
    def warmup_slots(self) -> int:
        """Full-rate warmup length: two segments, extended until one prediction has full history."""
        segs = max(2, math.ceil((self.l_in + self.warmup_w) / self.warmup_w))
        return segs * self.warmup_w


@dataclass
class StepOutcome:
    reduced_state: float
    reward: float
    cost: float
    done: bool
    raw_state: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def denormalize_action(raw, n_min: int, d_max: int, w_max: int, action_norm: bool = True) -> Action:
    """Map an actor output in [-1, 1] x [0, 1] to an integer ``(W, n)``.

    With ``action_norm`` the second component is a fraction of the chosen W;
    without it, a fraction of ``w_max`` (the ablation without interdependent
    normalization).
    """
    r1, r2 = float(raw[0]), float(raw[1])
    if not (math.isfinite(r1) and math.isfinite(r2)):
        raise ActionError(f"non-finite raw action {raw!r}")
    w = math.floor(d_max + (r1 + 1.0) / 2.0 * (w_max - d_max) + 0.5)
    w = min(max(w, d_max), w_max)
    ref = w if action_norm else w_max
    n = math.floor(r2 * ref + 0.5)
    n = min(max(n, max(2, n_min)), w)
    return Action(w, n)


class SyncEnv:
    def __init__(self, cfg: EnvConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.x = cfg.trajectory.samples
        self.rng = rng if rng is not None else np.random.default_rng(cfg.channel.seed)
        self.buffer = np.empty_like(self.x)
        self.cursor = 0
        self.k = 0
        self.done = True
        self.packets_sent = 0
        self.prev_w: int | None = None
        self.horizon_log: list[int] = []
        if len(self.x) < cfg.warmup_slots + cfg.w_max:
            raise ValueError(
                f"trajectory of {len(self.x)} slots shorter than warmup {cfg.warmup_slots} + w_max {cfg.w_max}")

    def _history(self, end: int) -> np.ndarray:
        return self.buffer[end - self.cfg.l_in:end]

    def _deliver(self, seg: np.ndarray, n: int, lossless: bool = False):
        start = self.cursor
        sampled = sample_segment(Segment(seg, start), n)
        if lossless:
            recon, outage, lost = reconstruct(sampled).values, False, 0
        else:
            delivered = transmit(sampled, self.cfg.channel, self.rng)
            lost = delivered.lost_count
            outage = delivered.outage
            if outage:
                # receiver holds its last reconstructed value across the lost segment
                recon = np.full(seg.size, self.buffer[start - 1])
            else:
                recon = reconstruct(delivered.sampled).values
        self.buffer[start:start + seg.size] = recon
        return outage, lost

    def _score(self, w: int) -> tuple[float, np.ndarray]:
        start = self.cursor
        pred = predict(self.cfg.predictor, self._history(start), w)
        return mse(self.x[start:start + w], pred), pred

    def reset(self, rng: np.random.Generator | None = None) -> StepOutcome:
        if rng is not None:
            self.rng = rng
        cfg = self.cfg
        self.cursor = 0
        self.k = 0
        self.packets_sent = 0
        self.horizon_log = []
        cost = 0.0
        while self.cursor < cfg.warmup_slots:
            seg = self.x[self.cursor:self.cursor + cfg.warmup_w]
            self._deliver(seg, cfg.warmup_n, lossless=True)
            if self.cursor >= cfg.l_in:
                cost, _ = self._score(cfg.warmup_w)
            self.cursor += cfg.warmup_w
        self.prev_w = cfg.warmup_w
        self.done = len(self.x) - self.cursor < cfg.w_max
        return StepOutcome(cost, 0.0, cost, self.done, self._history(self.cursor).copy(),
                           {"cursor_slot": self.cursor})

    def check_action(self, action: Action) -> None:
        cfg = self.cfg
        if not cfg.w_min <= action.w_next <= cfg.w_max:
            raise ActionError(f"W={action.w_next} outside [{cfg.w_min}, {cfg.w_max}]")
        if not cfg.n_min <= action.n_next <= action.w_next:
            raise ActionError(f"n={action.n_next} outside [{cfg.n_min}, {action.w_next}]")

    def step(self, action: Action, rng: np.random.Generator | None = None) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        if rng is not None:
            self.rng = rng
        self.check_action(action)
        w, n = action.w_next, action.n_next
        seg = self.x[self.cursor:self.cursor + w]
        outage, lost = self._deliver(seg, n)
        cost, _ = self._score(w)
        # the prediction issued one segment ago must span its own segment and this one
        horizon = self.prev_w + w
        if horizon > self.cfg.predictor.h_max:
            raise RuntimeError(f"prediction horizon {horizon} exceeds h_max")
        self.horizon_log.append(horizon)
        self.prev_w = w
        self.packets_sent += n
        self.cursor += w
        self.k += 1
        self.done = len(self.x) - self.cursor < self.cfg.w_max
        info = {"W": w, "n": n, "load": n / w, "outage": outage, "lost": lost,
                "slots": w, "cursor_slot": self.cursor, "horizon": horizon}
        return StepOutcome(cost, -n / w, cost, self.done, self._history(self.cursor).copy(), info)


STEP_LOG_COLUMNS = ("step", "W", "n", "reward", "cost", "outage", "cursor_slot")


def step_log_row(k: int, out: StepOutcome) -> list:
    return [k, out.info["W"], out.info["n"], repr(out.reward), repr(out.cost),
            int(out.info["outage"]), out.info["cursor_slot"]]


def write_step_log(path, rows, fingerprint: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if fingerprint:
            fh.write(f"# fingerprint: {fingerprint}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_LOG_COLUMNS)
        w.writerows(rows)
