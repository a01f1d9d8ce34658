"""Constrained twin-delayed actor-critic with a projected Lagrange multiplier.

Four critics are trained: two reward critics whose Bellman target takes the
smaller target estimate, and two cost critics whose target takes the larger
one. The actor ascends ``Q_R - lam * Q_C`` every ``d_a`` critic updates and the
multiplier ``lam`` follows projected dual ascent every ``d_lambda`` updates,
evaluated on replayed states (off-policy) unless ``apdo`` is disabled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import Action, StepOutcome, SyncEnv, denormalize_action
from .nn import Adam, DenseNet, Ensemble, polyak

A_LOW = np.array([-1.0, 0.0])
A_HIGH = np.array([1.0, 1.0])


@dataclass(frozen=True)
class Ablations:
    double_q: bool = True
    state_reduction: bool = True
    action_norm: bool = True
    apdo: bool = True


@dataclass
class AgentConfig:
    gamma_c: float  # average tracking-error threshold, squared degrees
    gamma: float = 0.99
    sigma: float = 0.1
    sigma_final: float | None = None
    sigma_decay_episodes: int = 0
    noise_clip: float = 0.2
    rho: float = 0.995
    d_a: int = 2
    d_lambda: int = 10
    beta: float = 0.01
    lambda_init: float = 0.0
    batch: int = 64
    buffer_capacity: int = 100_000
    updates_per_step: int = 1
    hidden: tuple = (64, 64)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    cost_scale: float | None = None  # None: 1 / gamma_c
    state_clip: float = 50.0
    ablations: Ablations = field(default_factory=Ablations)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.ablations, dict):
            self.ablations = Ablations(**self.ablations)
        self.hidden = tuple(self.hidden)
        problems = []
        if not 0.0 < self.gamma < 1.0:
            problems.append("gamma must lie in (0, 1)")
        if self.sigma < 0 or self.noise_clip < 0 or self.beta < 0:
            problems.append("sigma, noise_clip and beta must be >= 0")
        if self.d_a < 1 or self.d_lambda < 1:
            problems.append("d_a and d_lambda must be >= 1")
        if not self.gamma_c > 0:
            problems.append("gamma_c must be > 0")
        if not 0.0 <= self.rho <= 1.0:
            problems.append("rho must lie in [0, 1]")
        if self.batch < 1 or self.buffer_capacity < self.batch:
            problems.append("need 1 <= batch <= buffer_capacity")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def scale(self) -> float:
        return self.cost_scale if self.cost_scale is not None else 1.0 / self.gamma_c

    def sigma_at(self, episode: int) -> float:
        if self.sigma_final is None or self.sigma_decay_episodes <= 0:
            return self.sigma
        frac = min(episode / self.sigma_decay_episodes, 1.0)
        return self.sigma + frac * (self.sigma_final - self.sigma)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    c: float
    s_next: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions; batches are drawn uniformly without replacement."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int = 2):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.c = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, c, s_next) -> None:
        vals = (np.asarray(s, float), np.asarray(a, float), float(r), float(c), np.asarray(s_next, float))
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise ValueError("transition contains non-finite values")
        i = self.head
        self.s[i], self.a[i], self.r[i], self.c[i], self.s2[i] = vals
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"batch {batch} larger than buffer ({self.size})")
        return rng.choice(self.size, batch, replace=False)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = self.sample_indices(batch, rng)
        return self.s[idx], self.a[idx], self.r[idx], self.c[idx], self.s2[idx]

    def latest(self):
        i = (self.head - 1) % self.capacity
        return self.s[i:i + 1], self.a[i:i + 1], self.r[i:i + 1], self.c[i:i + 1], self.s2[i:i + 1]


def reward_target(r, q1_next, q2_next, gamma: float, double_q: bool = True) -> np.ndarray:
    q = np.minimum(q1_next, q2_next) if double_q else np.asarray(q1_next, dtype=float)
    return np.asarray(r, dtype=float) + gamma * q


def cost_target(c, qc1_next, qc2_next, gamma: float, double_q: bool = True) -> np.ndarray:
    q = np.maximum(qc1_next, qc2_next) if double_q else np.asarray(qc1_next, dtype=float)
    return np.asarray(c, dtype=float) + gamma * q


def update_dual(lam: float, mean_qc: float, beta: float, gamma_c: float, gamma: float) -> float:
    """Projected dual step ``max(0, lam + beta * (mean_qc - gamma_c / (1 - gamma)))``."""
    return max(0.0, lam + beta * (mean_qc - gamma_c / (1.0 - gamma)))


def select_action(actor: DenseNet, s, sigma: float, noise_clip: float,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    a = actor.forward(np.asarray(s, dtype=float))
    if sigma > 0:
        eps = np.clip(rng.normal(0.0, sigma, a.shape), -noise_clip, noise_clip)
        a = a + eps
    return np.clip(a, A_LOW, A_HIGH)


def make_actor(state_dim: int, hidden, rng) -> DenseNet:
    dims = [state_dim, *hidden, 2]
    return DenseNet.init(dims, ["relu"] * len(hidden) + [("tanh", "sigmoid")], rng)


# ensemble member order
R1, R2, C1, C2 = range(4)


class KCTD3Agent:
    """Actor, four critics (two reward, two cost), their targets, and the multiplier.

    The critics share one :class:`Ensemble` so they are fitted with a single
    batched pass; ``q_r`` / ``q_c`` expose the members as ordinary networks.
    """

    def __init__(self, cfg: AgentConfig, state_dim: int = 1):
        self.cfg = cfg
        self.state_dim = state_dim
        self.rng = np.random.default_rng(cfg.seed)
        h = cfg.hidden
        self.actor = make_actor(state_dim, h, self.rng)
        self.critics = Ensemble.init(4, [state_dim + 2, *h, 1], ["relu"] * len(h) + ["identity"], self.rng)
        self.actor_t = self.actor.copy()
        self.critics_t = self.critics.copy()
        self.actor_opt = Adam(lr=cfg.actor_lr)
        self.critic_opt = Adam(lr=cfg.critic_lr)
        self.lam = float(cfg.lambda_init)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, state_dim)
        self.iterations = 0
        self.trace: list[dict] = []
        self.record_trace = False

    @property
    def q_r(self) -> list[DenseNet]:
        return self.critics.members[R1:R2 + 1]

    @property
    def q_c(self) -> list[DenseNet]:
        return self.critics.members[C1:C2 + 1]

    @property
    def q_r_t(self) -> list[DenseNet]:
        return self.critics_t.members[R1:R2 + 1]

    @property
    def q_c_t(self) -> list[DenseNet]:
        return self.critics_t.members[C1:C2 + 1]

    @property
    def threshold(self) -> float:
        """Per-step cost threshold in the agent's scaled cost units."""
        return self.cfg.gamma_c * self.cfg.scale

    def act(self, s, sigma: float | None = None) -> np.ndarray:
        sig = self.cfg.sigma if sigma is None else sigma
        return select_action(self.actor, s, sig, self.cfg.noise_clip, self.rng)

    def targets(self, batch):
        s, a, r, c, s2 = batch
        a2 = self.actor_t.forward(s2)
        q = self.critics_t.forward(np.concatenate([s2, a2], axis=-1))[:, :, 0]
        dq = self.cfg.ablations.double_q
        y_r = reward_target(r, q[R1], q[R2], self.cfg.gamma, dq)
        y_c = cost_target(c, q[C1], q[C2], self.cfg.gamma, dq)
        return y_r, y_c

    def update_critics(self, batch) -> tuple[float, float]:
        """One Adam step of every trained critic towards its Bellman target; returns (loss_R, loss_C)."""
        s, a = batch[0], batch[1]
        y_r, y_c = self.targets(batch)
        out, cache = self.critics.forward_cached(np.concatenate([s, a], axis=-1))
        q = out[:, :, 0]
        err = q - np.stack([y_r, y_r, y_c, y_c])
        if not self.cfg.ablations.double_q:
            # the second reward/cost critics sit idle
            err[R2] = 0.0
            err[C2] = 0.0
        per_net = np.mean(err * err, axis=1)
        if not np.all(np.isfinite(per_net)):
            raise FloatingPointError("non-finite critic loss")
        grads, _ = self.critics.backward_cached(cache, (2.0 / err.shape[1]) * err[:, :, None])
        self.critic_opt.step(self.critics, grads)
        n = 2 if self.cfg.ablations.double_q else 1
        return float(per_net[R1:R1 + n].mean()), float(per_net[C1:C1 + n].mean())

    def update_actor(self, s, lam: float | None = None) -> float:
        """One ascent step on mean[Q_R1(s, mu(s)) - lam * Q_C1(s, mu(s))]; returns the loss (its negative)."""
        lam = self.lam if lam is None else lam
        B = s.shape[0]
        a, a_cache = self.actor.forward_cached(s)
        out, cache = self.critics.forward_cached(np.concatenate([s, a], axis=-1))
        objective = float(np.mean(out[R1, :, 0] - lam * out[C1, :, 0]))
        if not math.isfinite(objective):
            raise FloatingPointError("non-finite actor objective")
        up = np.zeros_like(out)
        up[R1] = -1.0 / B
        up[C1] = lam / B
        _, gx = self.critics.backward_cached(cache, up, need_params=False)
        grads, _ = self.actor.backward_cached(a_cache, gx[:, self.state_dim:])
        self.actor_opt.step(self.actor, grads)
        return -objective

    def mean_policy_cost(self, s) -> float:
        x = np.concatenate([s, self.actor.forward(s)], axis=-1)
        return float(np.mean(self.q_c[0].forward(x)))

    def update_dual_step(self, batch) -> float:
        s = batch[0] if self.cfg.ablations.apdo else self.buffer.latest()[0]
        self.lam = update_dual(self.lam, self.mean_policy_cost(s), self.cfg.beta,
                               self.threshold, self.cfg.gamma)
        return self.lam

    def soft_update(self) -> None:
        polyak(self.actor_t, self.actor, self.cfg.rho)
        polyak(self.critics_t, self.critics, self.cfg.rho)

    def train_iteration(self) -> dict:
        self.iterations += 1
        j = self.iterations
        idx = self.buffer.sample_indices(self.cfg.batch, self.rng)
        b = self.buffer
        batch = (b.s[idx], b.a[idx], b.r[idx], b.c[idx], b.s2[idx])
        loss_r, loss_c = self.update_critics(batch)
        rec = {"j": j, "loss_r": loss_r, "loss_c": loss_c}
        if j % self.cfg.d_a == 0:
            rec["loss_actor"] = self.update_actor(batch[0])
        if j % self.cfg.d_lambda == 0:
            rec["lambda"] = self.update_dual_step(batch)
        self.soft_update()
        if self.record_trace:
            self.trace.append(rec)
        return rec

    def to_dict(self) -> dict:
        return {
            "config": json.loads(json.dumps(asdict(self.cfg), default=list)),
            "config_hash": self.cfg.fingerprint(),
            "state_dim": self.state_dim,
            "lambda": self.lam,
            "actor": self.actor.to_dict(),
            "actor_target": self.actor_t.to_dict(),
            "critics": [q.to_dict() for q in self.q_r],
            "critic_targets": [q.to_dict() for q in self.q_r_t],
            "costs": [q.to_dict() for q in self.q_c],
            "cost_targets": [q.to_dict() for q in self.q_c_t],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KCTD3Agent":
        cfg_d = dict(d["config"])
        cfg_d["ablations"] = Ablations(**cfg_d["ablations"])
        agent = cls(AgentConfig(**cfg_d), int(d["state_dim"]))
        agent.lam = float(d["lambda"])
        agent.actor = DenseNet.from_dict(d["actor"])
        agent.actor_t = DenseNet.from_dict(d["actor_target"])
        for ens, key_r, key_c in ((agent.critics, "critics", "costs"),
                                  (agent.critics_t, "critic_targets", "cost_targets")):
            for dst, src in zip(ens.members, d[key_r] + d[key_c]):
                dst.params[...] = DenseNet.from_dict(src).params
        return agent

    def save(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**extra, **self.to_dict()}))

    @classmethod
    def load(cls, path) -> "KCTD3Agent":
        return cls.from_dict(json.loads(Path(path).read_text()))


def observe(agent: KCTD3Agent, out: StepOutcome, env: SyncEnv) -> np.ndarray:
    """Actor/critic input for an outcome: the scaled last tracking error, or the raw history window."""
    if agent.cfg.ablations.state_reduction:
        v = min(out.reduced_state * agent.cfg.scale, agent.cfg.state_clip)
        return np.array([v])
    model = env.cfg.predictor
    return (out.raw_state - model.mean) / model.scale


def state_dim_for(cfg: AgentConfig, env: SyncEnv) -> int:
    return 1 if cfg.ablations.state_reduction else env.cfg.l_in


@dataclass
class EpisodeStats:
    episode: int
    mean_load: float
    mean_cost: float
    lam: float
    steps: int
    outages: int


@dataclass
class TrainingLog:
    episodes: list[EpisodeStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.episodes])

    def write_csv(self, path, fingerprint: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if fingerprint:
                fh.write(f"# fingerprint: {fingerprint}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "mean_load", "mean_cost", "lambda"])
            for e in self.episodes:
                w.writerow([e.episode, repr(e.mean_load), repr(e.mean_cost), repr(e.lam)])


def run_episode(agent: KCTD3Agent, env: SyncEnv, sigma: float, learn: bool,
                step_rows: list | None = None):
    """Roll one pass over the trace; returns per-step (load, cost) arrays and outage count."""
    cfg = agent.cfg
    n_min = env.cfg.n_min
    out = env.reset()
    s = observe(agent, out, env)
    loads, costs, outages = [], [], 0
    while not out.done:
        raw = agent.act(s, sigma)
        action = denormalize_action(raw, n_min, env.cfg.w_min, env.cfg.w_max, cfg.ablations.action_norm)
        out = env.step(action)
        s_next = observe(agent, out, env)
        loads.append(out.info["load"])
        costs.append(out.cost)
        outages += int(out.info["outage"])
        if step_rows is not None:
            step_rows.append((len(loads), out))
        if learn:
            agent.buffer.add(s, raw, out.reward, out.cost * cfg.scale, s_next)
            if len(agent.buffer) >= cfg.batch:
                for _ in range(cfg.updates_per_step):
                    agent.train_iteration()
        s = s_next
    return np.array(loads), np.array(costs), outages


def train(env: SyncEnv, cfg: AgentConfig, episodes: int, agent: KCTD3Agent | None = None,
          progress=None) -> tuple[KCTD3Agent, TrainingLog]:
    """Run ``episodes`` training passes; each pass logs mean load, mean cost and the multiplier."""
    if agent is None:
        agent = KCTD3Agent(cfg, state_dim_for(cfg, env))
    log = TrainingLog()
    for m in range(episodes):
        loads, costs, outages = run_episode(agent, env, cfg.sigma_at(m), learn=True)
        stats = EpisodeStats(m + 1, float(loads.mean()), float(costs.mean()), agent.lam, len(loads), outages)
        log.episodes.append(stats)
        if progress is not None:
            progress(stats)
    return agent, log


def evaluate_policy(agent: KCTD3Agent, env: SyncEnv, step_rows: list | None = None):
    """Noise-free rollout; returns (per-step loads, per-step costs, outage count)."""
    return run_episode(agent, env, 0.0, learn=False, step_rows=step_rows)
