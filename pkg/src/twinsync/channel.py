"""Lossy forward link with a delay bound and the outage-driven sample floor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SampledSegment


@dataclass(frozen=True)
class ChannelConfig:
    d_max: int = 10
    d_forward: int = 10
    d_feedback: int = 10
    p_loss: float = 0.0
    outage_target: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_loss < 1.0:
            raise ValueError("p_loss must lie in [0, 1)")
        if not 0.0 < self.outage_target < 1.0:
            raise ValueError("outage_target must lie in (0, 1)")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1 slot")
        if self.d_forward > self.d_max or self.d_feedback > self.d_max:
            raise ValueError("link delays above d_max would drop every packet")

    @property
    def n_min(self) -> int:
        return min_samples(self.p_loss, self.outage_target)


@dataclass(frozen=True)
class DeliveredSegment:
    sampled: SampledSegment
    lost_count: int
    outage: bool


def outage_probability(p_loss: float, n: int) -> float:
    """P(at most one of ``n`` independent packets survives)."""
    return p_loss ** n + n * p_loss ** (n - 1) * (1.0 - p_loss)


def min_samples(p_loss: float, outage_target: float) -> int:
    if not 0.0 <= p_loss < 1.0 or not 0.0 < outage_target < 1.0:
        raise ValueError("p_loss must lie in [0, 1) and outage_target in (0, 1)")
    n = 2
    while outage_probability(p_loss, n) > outage_target:
        n += 1
    return n


def transmit(sampled: SampledSegment, cfg: ChannelConfig, rng: np.random.Generator) -> DeliveredSegment:
    n_sent = sampled.slots.size
    if cfg.p_loss > 0.0:
        keep = rng.random(n_sent) >= cfg.p_loss
    else:
        keep = np.ones(n_sent, dtype=bool)
    survivors = SampledSegment(sampled.slots[keep], sampled.values[keep],
                               sampled.W, sampled.n, sampled.start_slot)
    n_kept = int(keep.sum())
    return DeliveredSegment(survivors, n_sent - n_kept, n_kept < 2)
