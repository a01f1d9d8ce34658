"""Decimation, linear reconstruction and segment MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class OutageError(RuntimeError):
    """Fewer than two samples reached the receiver."""


@dataclass(frozen=True)
class Segment:
    values: np.ndarray
    start_slot: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SampledSegment:
    """Samples keyed by 1-based local slot within a segment of length ``W``."""

    slots: np.ndarray  # int, 1-based, strictly increasing
    values: np.ndarray
    W: int
    n: int
    start_slot: int = 0

    def __post_init__(self):
        slots = np.asarray(self.slots, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if slots.shape != values.shape:
            raise ValueError("slots and values differ in length")
        if slots.size > self.n:
            raise ValueError("more pairs than intended samples")
        if slots.size and (slots[0] < 1 or slots[-1] > self.W or np.any(np.diff(slots) <= 0)):
            raise ValueError("local slots must be strictly increasing within [1, W]")
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "values", values)

    @property
    def pairs(self) -> list[tuple[int, float]]:
        return [(int(s), float(v)) for s, v in zip(self.slots, self.values)]


def sample_slots(W: int, n: int) -> np.ndarray:
    if n < 2 or n > W:
        raise ValueError(f"need 2 <= n <= W, got n={n}, W={W}")
    return (W // n) * np.arange(n, dtype=np.int64) + 1


def sample_segment(seg: Segment, n: int) -> SampledSegment:
    W = len(seg)
    slots = sample_slots(W, n)
    return SampledSegment(slots, seg.values[slots - 1], W, n, seg.start_slot)


def sampling_rate(n: int, W: int) -> float:
    if W == 0:
        raise ZeroDivisionError("segment length W is zero")
    if not 1 <= n <= W:
        raise ValueError(f"need 1 <= n <= W, got n={n}, W={W}")
    return n / W


def reconstruct(sampled: SampledSegment) -> Segment:
    """Linear interpolation between received samples, holding the end values outside them."""
    if sampled.slots.size < 2:
        raise OutageError(f"{sampled.slots.size} sample(s) received, need 2")
    grid = np.arange(1, sampled.W + 1, dtype=float)
    # np.interp clamps to the end values outside [slots[0], slots[-1]]
    values = np.interp(grid, sampled.slots.astype(float), sampled.values)
    return Segment(values, sampled.start_slot)


def mse(a, b) -> float:
    a = a.values if isinstance(a, Segment) else np.asarray(a, dtype=float)
    b = b.values if isinstance(b, Segment) else np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d) / d.size
