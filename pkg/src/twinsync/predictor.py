"""Windowed MLP forecaster mapping reconstructed history to a future horizon."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Adam, DenseNet
from .signal import Trajectory

SCALE_FLOOR = 1e-9


@dataclass
class WindowDataset:
    history: np.ndarray  # (rows, l_in)
    future: np.ndarray  # (rows, h_max)
    mean: float
    scale: float

    def __len__(self) -> int:
        return self.history.shape[0]

    @property
    def l_in(self) -> int:
        return self.history.shape[1]

    @property
    def h_max(self) -> int:
        return self.future.shape[1]

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.mean


@dataclass
class PredictorModel:
    net: DenseNet
    l_in: int
    h_max: int
    mean: float = 0.0
    scale: float = 1.0
    final_loss: float = float("nan")

    def __post_init__(self):
        if self.net.in_dim != self.l_in or self.net.out_dim != self.h_max:
            raise ValueError("network shape does not match (l_in, h_max)")

    def to_dict(self) -> dict:
        return {"net": self.net.to_dict(), "l_in": self.l_in, "h_max": self.h_max,
                "mean": self.mean, "scale": self.scale, "final_loss": self.final_loss}

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorModel":
        return cls(DenseNet.from_dict(d["net"]), int(d["l_in"]), int(d["h_max"]),
                   float(d["mean"]), float(d["scale"]), float(d.get("final_loss", "nan")))

    def save(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**extra, **self.to_dict()}))

    @classmethod
    def load(cls, path) -> "PredictorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_dataset(traj: Trajectory, l_in: int, h_max: int) -> WindowDataset:
    x = traj.samples
    rows = x.size - l_in - h_max + 1
    if l_in < 1 or h_max < 1 or rows < 1:
        raise ValueError(f"trajectory of {x.size} samples too short for l_in={l_in}, h_max={h_max}")
    win = np.lib.stride_tricks.sliding_window_view(x, l_in + h_max)
    history = np.ascontiguousarray(win[:, :l_in])
    future = np.ascontiguousarray(win[:, l_in:])
    # history values of stride-1 windows are x[0 : rows + l_in - 1]
    covered = x[:rows + l_in - 1]
    mean = float(covered.mean())
    std = float(covered.std())
    scale = std if std > SCALE_FLOOR else 1.0
    return WindowDataset(history, future, mean, scale)


def make_predictor_net(l_in: int, h_max: int, hidden=(128, 128), rng=None) -> DenseNet:
    dims = [l_in, *hidden, h_max]
    acts = ["relu"] * len(hidden) + ["identity"]
    return DenseNet.init(dims, acts, rng if rng is not None else np.random.default_rng(0))


def train_predictor(ds: WindowDataset, epochs: int = 30, batch: int = 64, seed: int = 0,
                    hidden=(128, 128), lr: float = 1e-3, lr_final: float = 1e-5,
                    loss_log: list | None = None) -> PredictorModel:
    """Minimise the horizon-wide mean squared error on normalized windows.

    The learning rate follows a cosine schedule from ``lr`` to ``lr_final``.
    ``loss_log`` (if given) receives one mean training loss per epoch, in
    normalized units. The returned model's ``final_loss`` is the full-dataset
    MSE in squared degrees after the last epoch.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    net = make_predictor_net(ds.l_in, ds.h_max, hidden, rng)
    opt = Adam(lr=lr)
    X = ds.normalize(ds.history)
    Y = ds.normalize(ds.future)
    rows = len(ds)
    steps_per_epoch = -(-rows // batch)
    total_steps = max(epochs * steps_per_epoch, 1)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(rows)
        total = 0.0
        for lo in range(0, rows, batch):
            idx = order[lo:lo + batch]
            out, cache = net.forward_cached(X[idx])
            err = out - Y[idx]
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise FloatingPointError("predictor training diverged")
            total += loss * idx.size
            grads, _ = net.backward_cached(cache, 2.0 * err / err.size, need_params=True)
            # cosine decay from lr to lr_final
            opt.lr = lr_final + 0.5 * (lr - lr_final) * (1.0 + np.cos(np.pi * step / total_steps))
            opt.step(net, grads)
            step += 1
        if loss_log is not None:
            loss_log.append(total / rows)
    model = PredictorModel(net, ds.l_in, ds.h_max, ds.mean, ds.scale)
    model.final_loss = evaluate_predictor(model, ds)
    return model


def evaluate_predictor(model: PredictorModel, ds: WindowDataset, batch: int = 4096) -> float:
    """Horizon-wide prediction MSE over the dataset, squared degrees."""
    total = 0.0
    for lo in range(0, len(ds), batch):
        pred = predict_batch(model, ds.history[lo:lo + batch])
        d = pred - ds.future[lo:lo + batch]
        total += float(np.sum(d * d))
    return total / (len(ds) * ds.h_max)


def predict_batch(model: PredictorModel, histories) -> np.ndarray:
    z = (np.asarray(histories, dtype=float) - model.mean) / model.scale
    return model.net.forward(z) * model.scale + model.mean


def predict(model: PredictorModel, history, horizon: int) -> np.ndarray:
    history = np.asarray(history, dtype=float)
    if history.shape != (model.l_in,):
        raise ValueError(f"history must have length {model.l_in}, got {history.shape}")
    if not 1 <= horizon <= model.h_max:
        raise ValueError(f"horizon {horizon} outside [1, {model.h_max}]")
    return predict_batch(model, history)[:horizon]
