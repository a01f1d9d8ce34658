"""Joint-angle trajectories: CSV ingestion, synthesis, de-correlation time."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NYQUIST_HZ = 500.0


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Fixed-rate scalar angle trace in degrees, one sample per slot."""

    samples: np.ndarray
    slot_duration: float = 1.0  # ms
    origin_slot: int = 0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise TraceError("trajectory needs a non-empty 1-D sample array")
        if self.slot_duration <= 0:
            raise TraceError("slot_duration must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    def at(self, slot: int) -> float:
        i = slot - self.origin_slot
        if i < 0 or i >= self.samples.size:
            raise IndexError(f"slot {slot} outside [{self.origin_slot}, {self.origin_slot + self.samples.size})")
        return float(self.samples[i])

    def window(self, start: int, length: int) -> np.ndarray:
        i = start - self.origin_slot
        if i < 0 or length < 0 or i + length > self.samples.size:
            raise IndexError(f"window [{start}, {start + length}) outside trajectory")
        return self.samples[i:i + length]


@dataclass(frozen=True)
class SynthSpec:
    # (amplitude deg, frequency Hz, phase rad)
    components: tuple = ((1.0, 0.7, 0.0), (0.3, 2.3, 0.0), (0.1, 5.1, 0.0))
    noise_std: float = 0.005
    duration_slots: int = 20_000
    seed: int = 0

    def validate(self) -> None:
        if self.duration_slots < 1:
            raise TraceError("duration_slots must be >= 1")
        if self.noise_std < 0:
            raise TraceError("noise_std must be >= 0")
        for amp, freq, phase in self.components:
            if not freq < NYQUIST_HZ:
                raise TraceError(f"component frequency {freq} Hz is not below {NYQUIST_HZ} Hz")


def _parse_float(text: str) -> float | None:
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_trace(path: str | Path) -> Trajectory:
    """Read one angle per line; a non-numeric first line is taken as a header."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    values = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        v = _parse_float(text)
        if v is None:
            if lineno == 1:
                continue
            raise TraceError(f"{path}: line {lineno}: not a number: {text!r}")
        values.append(v)
    if not values:
        raise TraceError(f"{path}: no samples")
    return Trajectory(np.array(values))


def save_trace(traj: Trajectory, path: str | Path, header: str = "angle") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(header + "\n")
        for v in traj.samples:
            fh.write(repr(float(v)) + "\n")


def synthesize_trace(spec: SynthSpec) -> Trajectory:
    spec.validate()
    t = np.arange(spec.duration_slots, dtype=float) * 0.001
    x = np.zeros(spec.duration_slots)
    for amp, freq, phase in spec.components:
        x += amp * np.sin(2.0 * np.pi * freq * t + phase)
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        x += rng.normal(0.0, spec.noise_std, spec.duration_slots)
    return Trajectory(x)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Mean-removed, biased (1/N) autocorrelation normalized to 1 at lag 0."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    var = float(d @ d)
    if d.size < 2 or var <= 0.0:
        raise TraceError("autocorrelation undefined for a zero-variance trajectory")
    n = d.size
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
    return acov / var


def estimate_decorrelation_time(traj: Trajectory, threshold: float = 0.5) -> int:
    """Smallest lag (slots) at which the autocorrelation drops below ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    rho = autocorrelation(traj.samples)
    below = np.nonzero(rho[1:] < threshold)[0]
    if below.size == 0:
        raise TraceError("autocorrelation never falls below threshold; trace too short")
    return int(below[0]) + 1
