"""Hand-built models shared by several test modules."""

import numpy as np

from twinsync.nn import DenseNet
from twinsync.predictor import PredictorModel


def hold_last_predictor(l_in: int, h_max: int, mean: float = 0.0, scale: float = 1.0) -> PredictorModel:
    """Predicts the final history value at every horizon: relu(x) - relu(-x) of the last input."""
    net = DenseNet([l_in, 2, h_max], ["relu", "identity"])
    net.weights[0][-1] = [1.0, -1.0]
    net.weights[1][0, :] = 1.0
    net.weights[1][1, :] = -1.0
    return PredictorModel(net, l_in, h_max, mean, scale)


def small_env(x, channel=None, w_max=20, l_in=5, warmup=(10, 10), seed=0):
    """Environment over a short trace with a hold-last predictor."""
    from twinsync.channel import ChannelConfig
    from twinsync.env import EnvConfig, SyncEnv
    from twinsync.signal import Trajectory

    channel = channel or ChannelConfig(d_max=10, d_forward=5, d_feedback=5)
    cfg = EnvConfig(Trajectory(np.asarray(x, dtype=float)), channel, hold_last_predictor(l_in, 2 * w_max),
                    w_max=w_max, warmup_w=warmup[0], warmup_n=warmup[1])
    return SyncEnv(cfg, np.random.default_rng(seed))
