"""Command-line entry point: synth, train-predictor, train-policy, evaluate, sweep, baseline.

Every command reads one JSON run configuration (defaults below, file values,
then flags), validates all of it up front, and writes CSV plus a JSON summary
into the output directory. Each file carries the configuration fingerprint.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    EnvSettings, EvalReport, InfeasibleError, default_grid, evaluate_agent, exhaustive_search,
    fixed_policy_surface, run_baseline, run_fixed_policy, surface_percentile, tradeoff_sweep,
    write_ccdf_csv, write_json, write_series_csv, write_surface_csv, write_tradeoff_csv, SurfacePoint,
)
from .channel import ChannelConfig
from .env import SyncEnv, step_log_row, write_step_log
from .kctd3 import Ablations, AgentConfig, KCTD3Agent, train
from .predictor import PredictorModel, build_dataset, train_predictor
from .signal import SynthSpec, Trajectory, estimate_decorrelation_time, load_trace, save_trace, synthesize_trace

STREAMS = {"trace": 0, "channel": 1, "agent": 2, "eval": 3, "predictor": 4}

DEFAULTS = {
    "seed": 0,
    "out": "runs/default",
    "trace": {
        "path": None,
        "components": [[1.0, 0.7, 0.0], [0.3, 2.3, 0.0], [0.1, 5.1, 0.0]],
        "noise_std": 0.005,
        "duration_slots": 20_000,
    },
    "channel": {"d_max": 10, "d_forward": 10, "d_feedback": 10, "p_loss": 0.0, "outage_target": 1e-5},
    "predictor": {"l_in": None, "h_max": 200, "hidden": [128, 128], "epochs": 20, "batch": 64,
                  "lr": 3e-3, "lr_final": 1e-5, "decorrelation_threshold": 0.5},
    "env": {"w_max": 100, "warmup_w": 50, "warmup_n": 50, "gamma": 0.99},
    "gamma_c": {"percentile": 40},
    "agent": {
        "episodes": 400, "sigma": 0.1, "sigma_final": 0.02, "sigma_decay_episodes": 300,
        "noise_clip": 0.2, "rho": 0.995, "d_a": 2, "d_lambda": 10, "beta": 0.01, "lambda_init": 0.0,
        "batch": 64, "buffer_capacity": 100_000, "updates_per_step": 1, "hidden": [64, 64],
        "actor_lr": 1e-4, "critic_lr": 1e-3, "cost_scale": None, "state_clip": 50.0,
        "ablations": {"double_q": True, "state_reduction": True, "action_norm": True, "apdo": True},
    },
    "bench": {"w_step": 10, "n_step": 2, "repeats": 10, "eval_repeats": 10, "e2e_delay": 50,
              "gamma_c_list": [{"percentile": 40}], "p_loss_list": [0.0, 0.01, 0.1]},
}

# keys whose value may be null as well as the default's type
NULLABLE = {"trace.path", "predictor.l_in", "agent.cost_scale", "agent.sigma_final"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _kind(v):
    if isinstance(v, bool):
        return bool
    if isinstance(v, (int, float)):
        return float
    return type(v)


def _type_name(default) -> str:
    if isinstance(default, bool):
        return "boolean"
    if isinstance(default, int):
        return "integer"
    if isinstance(default, float):
        return "number"
    return type(default).__name__


def _known(section: str, values: dict) -> dict:
    return {k: v for k, v in values.items() if k in DEFAULTS[section]}


def _check_gamma_c(value, key: str, problems: list[str]) -> None:
    if isinstance(value, dict):
        if set(value) != {"percentile"} or _kind(value["percentile"]) is not float \
                or not 0 <= value["percentile"] <= 100:
            problems.append(f"{key}: expected a number or {{\"percentile\": 0..100}}")
    elif _kind(value) is not float or not value > 0:
        problems.append(f"{key}: must be a positive number or {{\"percentile\": q}}")


def _validate(cfg, ref, prefix: str, problems: list[str]) -> None:
    for key in cfg:
        if key not in ref:
            problems.append(f"{prefix}{key}: unknown key")
    for key, default in ref.items():
        path = f"{prefix}{key}"
        if key not in cfg:
            continue
        val = cfg[key]
        if path in ("gamma_c",):
            _check_gamma_c(val, path, problems)
        elif path == "bench.gamma_c_list":
            if not isinstance(val, list) or not val:
                problems.append(f"{path}: must be a non-empty list")
            else:
                for i, g in enumerate(val):
                    _check_gamma_c(g, f"{path}[{i}]", problems)
        elif isinstance(default, dict):
            if not isinstance(val, dict):
                problems.append(f"{path}: expected an object")
            else:
                _validate(val, default, path + ".", problems)
        elif val is None:
            if path not in NULLABLE:
                problems.append(f"{path}: may not be null")
        elif default is None:
            if path == "trace.path" and not isinstance(val, str):
                problems.append(f"{path}: expected a string")
            elif path != "trace.path" and _kind(val) is not float:
                problems.append(f"{path}: expected a number")
        elif isinstance(default, list):
            if not isinstance(val, list):
                problems.append(f"{path}: expected a list")
        elif _kind(val) is not _kind(default):
            problems.append(f"{path}: expected {_type_name(default)}, got {type(val).__name__}")
        elif isinstance(default, int) and not isinstance(default, bool) and not isinstance(val, int):
            problems.append(f"{path}: expected an integer")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "gamma_c":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    """Validated configuration tree plus the objects built from it."""

    def __init__(self, data: dict):
        if not isinstance(data, dict):
            raise ConfigError(["config root must be an object"])
        problems: list[str] = []
        _validate(data, DEFAULTS, "", problems)
        self.data = _merge(DEFAULTS, data)
        d = self.data
        p, e, b = d["predictor"], d["env"], d["bench"]
        checks = [
            ("trace", self._synth_spec),
            ("channel", self.channel),
            ("agent", lambda: self.agent_config(1.0)),
            ("predictor.l_in: must be >= 1 or null", lambda: p["l_in"] is None or p["l_in"] >= 1),
            ("predictor.epochs/batch: need epochs >= 0 and batch >= 1", lambda: p["epochs"] >= 0 and p["batch"] >= 1),
            ("predictor.decorrelation_threshold: must lie in (0, 1)",
             lambda: 0 < p["decorrelation_threshold"] < 1),
            ("env.w_max: two segments must fit in predictor.h_max", lambda: 2 * e["w_max"] <= p["h_max"]),
            ("env.w_max: must be >= channel.d_max", lambda: e["w_max"] >= d["channel"]["d_max"]),
            ("env.warmup_w/warmup_n: need d_max <= warmup_w and warmup_n <= warmup_w",
             lambda: e["warmup_n"] <= e["warmup_w"] and e["warmup_w"] >= d["channel"]["d_max"]),
            ("env.gamma: must lie in (0, 1)", lambda: 0 < e["gamma"] < 1),
            ("agent.episodes: must be >= 0", lambda: d["agent"]["episodes"] >= 0),
            ("bench: steps and repeats must be >= 1",
             lambda: min(b["w_step"], b["n_step"], b["repeats"], b["eval_repeats"]) >= 1),
            ("bench.e2e_delay: must be >= 0", lambda: b["e2e_delay"] >= 0),
            ("bench.p_loss_list: non-empty, each in [0, 1)",
             lambda: bool(b["p_loss_list"]) and all(0 <= q < 1 for q in b["p_loss_list"])),
        ]
        for label, check in checks:
            try:
                ok = check()
            except (ValueError, TypeError) as exc:
                # a mistyped value has already been reported structurally
                if ":" not in label:
                    problems.append(f"{label}: {exc}")
                continue
            if ok is False:
                problems.append(label)
        if problems:
            raise ConfigError(list(dict.fromkeys(problems)))

    @classmethod
    def from_sources(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError([f"config file is not valid JSON: {exc}"]) from exc
            except OSError as exc:
                raise ConfigError([f"cannot read config file: {exc}"]) from exc
        if overrides:
            if not isinstance(data, dict):
                raise ConfigError(["config root must be an object"])
            data = _merge(data, overrides)
        return cls(data)

    @property
    def fingerprint(self) -> str:
        """sha256 of the configuration, excluding where outputs are written."""
        blob = json.dumps({k: v for k, v in self.data.items() if k != "out"}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def section_fingerprint(self, *sections: str) -> str:
        blob = json.dumps({s: self.data[s] for s in sections}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def stream_seed(self, name: str) -> int:
        ss = np.random.SeedSequence([self.data["seed"], STREAMS[name]])
        return int(ss.generate_state(1)[0])

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.stream_seed(name))

    def _synth_spec(self) -> SynthSpec:
        t = self.data["trace"]
        spec = SynthSpec(tuple(tuple(c) for c in t["components"]), t["noise_std"], t["duration_slots"],
                         self.stream_seed("trace"))
        spec.validate()
        return spec

    def channel(self, p_loss: float | None = None) -> ChannelConfig:
        c = _known("channel", self.data["channel"])
        if p_loss is not None:
            c["p_loss"] = p_loss
        return ChannelConfig(seed=self.stream_seed("channel"), **c)

    def agent_config(self, gamma_c: float) -> AgentConfig:
        a = _known("agent", self.data["agent"])
        a.pop("episodes")
        a["ablations"] = Ablations(**{k: v for k, v in a["ablations"].items()
                                      if k in DEFAULTS["agent"]["ablations"]})
        a["hidden"] = tuple(a["hidden"])
        return AgentConfig(gamma_c=gamma_c, gamma=self.data["env"]["gamma"], seed=self.stream_seed("agent"), **a)


# --- pipeline pieces ----------------------------------------------------------

def _trace_file(cfg: RunConfig) -> Path:
    return cfg.out / "trace.csv"


def obtain_trace(cfg: RunConfig) -> Trajectory:
    """Configured trace file, else this run's synthesized trace (read back if already written)."""
    if cfg.data["trace"]["path"]:
        return load_trace(cfg.data["trace"]["path"])
    if _trace_file(cfg).exists():
        return load_trace(_trace_file(cfg))
    return synthesize_trace(cfg._synth_spec())


def load_predictor(cfg: RunConfig) -> PredictorModel:
    path = cfg.out / "predictor.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} missing; run train-predictor first")
    return PredictorModel.load(path)


def env_settings(cfg: RunConfig, model: PredictorModel) -> EnvSettings:
    e = cfg.data["env"]
    return EnvSettings(model, e["w_max"], e["warmup_w"], e["warmup_n"], e["gamma"])


def surface(cfg: RunConfig, traj: Trajectory, model: PredictorModel, channel: ChannelConfig) -> list[SurfacePoint]:
    """Fixed-policy error surface, cached in the output directory under its own input fingerprint."""
    b, e = cfg.data["bench"], cfg.data["env"]
    key = hashlib.sha256(json.dumps([cfg.section_fingerprint("seed", "trace", "predictor", "env"),
                                     b["w_step"], b["n_step"], b["repeats"], channel.p_loss,
                                     channel.outage_target, channel.d_max],
                                    sort_keys=True).encode()).hexdigest()
    tag = f"p{channel.p_loss:g}"
    path = cfg.out / f"surface_{tag}.csv"
    if path.exists():
        lines = path.read_text().splitlines()
        # reusable whenever its inputs match, even if agent settings differ
        if lines and lines[0].startswith("# fingerprint: ") and lines[0].endswith(f" surface={key}"):
            pts = []
            for row in csv.DictReader(lines[1:]):
                rep = EvalReport(float(row["normalized_load"]), float(row["avg_error"]), np.zeros(0))
                pts.append(SurfacePoint(int(row["W"]), int(row["n"]), rep))
            return pts
    grid = default_grid(channel, e["w_max"], b["w_step"], b["n_step"])
    pts = fixed_policy_surface(traj, channel, env_settings(cfg, model), grid, b["repeats"], cfg.stream_seed("eval"))
    write_surface_csv(path, pts, f"{cfg.fingerprint} surface={key}")
    return pts


def resolve_gamma_c(cfg: RunConfig, spec, traj, model, channel) -> float:
    if isinstance(spec, dict):
        return surface_percentile(surface(cfg, traj, model, channel), spec["percentile"])
    return float(spec)


def _summary(cfg: RunConfig, command: str, **payload) -> dict:
    return {"command": command, "fingerprint": cfg.fingerprint, "seed": cfg.data["seed"],
            "version": __version__, **payload}


# --- commands -----------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> dict:
    traj = synthesize_trace(cfg._synth_spec())
    save_trace(traj, _trace_file(cfg), header=f"angle;fingerprint={cfg.fingerprint}")
    summary = _summary(cfg, "synth", samples=len(traj), path=str(_trace_file(cfg)),
                       mean=float(traj.samples.mean()), std=float(traj.samples.std()))
    write_json(cfg.out / "synth.json", summary)
    return summary


def cmd_train_predictor(cfg: RunConfig, args) -> dict:
    traj = obtain_trace(cfg)
    p = cfg.data["predictor"]
    l_in = p["l_in"] or estimate_decorrelation_time(traj, p["decorrelation_threshold"])
    losses: list[float] = []
    model = train_predictor(build_dataset(traj, int(l_in), p["h_max"]), epochs=p["epochs"], batch=p["batch"],
                            seed=cfg.stream_seed("predictor"), hidden=tuple(p["hidden"]), lr=p["lr"],
                            lr_final=p["lr_final"], loss_log=losses)
    model.save(cfg.out / "predictor.json", fingerprint=cfg.fingerprint)
    with open(cfg.out / "predictor_loss.csv", "w", newline="") as fh:
        fh.write(f"# fingerprint: {cfg.fingerprint}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss_normalized"])
        w.writerows([i + 1, repr(v)] for i, v in enumerate(losses))
    summary = _summary(cfg, "train-predictor", l_in=int(l_in), h_max=p["h_max"], final_loss=model.final_loss)
    write_json(cfg.out / "predictor_summary.json", summary)
    return summary


def _make_env(cfg: RunConfig, traj, model, channel, stream: str) -> SyncEnv:
    return env_settings(cfg, model).make(traj, channel, cfg.rng(stream))


def _train_agent(cfg: RunConfig, traj, model, channel, gamma_c: float, tag: str):
    env = _make_env(cfg, traj, model, channel, "channel")
    agent_cfg = cfg.agent_config(gamma_c)
    agent, log = train(env, agent_cfg, cfg.data["agent"]["episodes"])
    agent.save(cfg.out / f"agent{tag}.json", fingerprint=cfg.fingerprint, gamma_c=gamma_c, p_loss=channel.p_loss)
    log.write_csv(cfg.out / f"training{tag}.csv", cfg.fingerprint)
    return agent, log


def cmd_train_policy(cfg: RunConfig, args) -> dict:
    traj, model, channel = obtain_trace(cfg), load_predictor(cfg), cfg.channel()
    gamma_c = resolve_gamma_c(cfg, cfg.data["gamma_c"], traj, model, channel)
    agent, log = _train_agent(cfg, traj, model, channel, gamma_c, "")
    tail = log.episodes[-50:]
    summary = _summary(cfg, "train-policy", gamma_c=gamma_c, p_loss=channel.p_loss, episodes=len(log),
                       final_lambda=agent.lam,
                       final50_mean_cost=float(np.mean([e.mean_cost for e in tail])) if tail else None,
                       final50_mean_load=float(np.mean([e.mean_load for e in tail])) if tail else None)
    write_json(cfg.out / "training_summary.json", summary)
    return summary


def _write_report(cfg: RunConfig, rep: EvalReport, stem: str) -> None:
    write_series_csv(cfg.out / f"{stem}_series.csv", rep, cfg.fingerprint)
    write_ccdf_csv(cfg.out / f"{stem}_ccdf.csv", rep, cfg.fingerprint)


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    traj, model, channel = obtain_trace(cfg), load_predictor(cfg), cfg.channel()
    ckpt = Path(args.checkpoint) if getattr(args, "checkpoint", None) else cfg.out / "agent.json"
    if not ckpt.exists():
        raise FileNotFoundError(f"{ckpt} missing; run train-policy first")
    agent = KCTD3Agent.load(ckpt)
    rows: list = []
    rep = evaluate_agent(agent, traj, channel, env_settings(cfg, model), cfg.data["bench"]["eval_repeats"],
                         cfg.stream_seed("eval"), step_rows=rows)
    rep.fingerprint = cfg.fingerprint
    _write_report(cfg, rep, "eval")
    write_step_log(cfg.out / "eval_steps.csv", [step_log_row(k, out) for k, out in rows], cfg.fingerprint)
    gamma_c = agent.cfg.gamma_c
    summary = _summary(cfg, "evaluate", checkpoint=str(ckpt), gamma_c=gamma_c, **rep.summary(),
                       tail_2gamma=rep.tail(2 * gamma_c))
    write_json(cfg.out / "eval.json", summary)
    return summary


def cmd_baseline(cfg: RunConfig, args) -> dict:
    traj = obtain_trace(cfg)
    d = cfg.data["bench"]["e2e_delay"]
    rep = run_baseline(traj, d)
    rep.fingerprint = cfg.fingerprint
    _write_report(cfg, rep, "baseline")
    summary = _summary(cfg, "baseline", e2e_delay=d, **rep.summary())
    write_json(cfg.out / "baseline.json", summary)
    return summary


def cmd_sweep(cfg: RunConfig, args) -> dict:
    traj, model = obtain_trace(cfg), load_predictor(cfg)
    b = cfg.data["bench"]
    settings = env_settings(cfg, model)
    base = cfg.channel()
    surf = surface(cfg, traj, model, base)
    g_values = [resolve_gamma_c(cfg, g, traj, model, base) for g in b["gamma_c_list"]]
    static = []
    for g in g_values:
        try:
            W, n, _ = exhaustive_search(surf, g)
        except InfeasibleError as exc:
            static.append({"gamma_c": g, "feasible": False, "best_error": exc.best_error,
                           "best_point": list(exc.best_point)})
            continue
        rep = run_fixed_policy(traj, W, n, base, settings, b["repeats"], cfg.stream_seed("eval"))
        _write_report(cfg, rep, f"static_g{g:.6g}")
        static.append({"gamma_c": g, "feasible": True, "W": W, "n": n,
                       "normalized_load": rep.normalized_load, "avg_error": rep.avg_error,
                       "tail_2gamma": rep.tail(2 * g)})

    def agent_for(g, p):
        ch = cfg.channel(p)
        return _train_agent(cfg, traj, model, ch, g, f"_g{g:.6g}_p{p:g}")[0]

    rows = tradeoff_sweep(traj, g_values, b["p_loss_list"], settings, agent_for, base,
                          b["eval_repeats"], cfg.stream_seed("eval"))
    write_tradeoff_csv(cfg.out / "tradeoff.csv", rows, cfg.fingerprint)
    summary = _summary(cfg, "sweep", surface_points=len(surf), exhaustive=static,
                       tradeoff=[vars(r) for r in rows])
    write_json(cfg.out / "sweep.json", summary)
    return summary


COMMANDS = {
    "synth": cmd_synth,
    "train-predictor": cmd_train_predictor,
    "train-policy": cmd_train_policy,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twinsync", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="root seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--gamma-c", type=float, help="error threshold (squared degrees)")
        sp.add_argument("--p-loss", type=float, help="packet loss probability")
        sp.add_argument("--e2e-delay", type=int, help="baseline end-to-end delay (slots)")
        sp.add_argument("--episodes", type=int, help="training episodes")
        if name == "evaluate":
            sp.add_argument("--checkpoint", help="agent checkpoint (default: <out>/agent.json)")
    return ap


def _overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    if args.gamma_c is not None:
        over["gamma_c"] = args.gamma_c
    if args.p_loss is not None:
        over.setdefault("channel", {})["p_loss"] = args.p_loss
    if args.e2e_delay is not None:
        over.setdefault("bench", {})["e2e_delay"] = args.e2e_delay
    if args.episodes is not None:
        over.setdefault("agent", {})["episodes"] = args.episodes
    return over


def _fail(kind: str, message: str, problems=None, code: int = 1) -> int:
    payload = {"error": kind, "message": message}
    if problems:
        payload["problems"] = problems
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_sources(args.config, _overrides(args))
    except ConfigError as exc:
        return _fail("config", "invalid configuration", exc.problems, code=2)
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, args)
    except InfeasibleError as exc:
        return _fail("infeasible", str(exc))
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
