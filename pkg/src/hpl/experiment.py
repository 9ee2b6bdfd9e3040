"""Experiment pipeline shared by the CLI and the acceptance tests.

Tasks are split into a training set (demonstrations) and held-out
evaluation tasks; every split and every random choice derives from the
run configuration's seed substreams.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hpl import planner as pl, strategy as st
from hpl.config import RunConfig
from hpl.envs import env_from_dict, flappy, track, tube
from hpl.envs.demo import DemoError, demonstrate, demonstrate_many
from hpl.execution import Execution
from hpl.safety import policy_for, verify_invariance

log = logging.getLogger(__name__)


def train_envs(cfg: RunConfig):
    seed = cfg.substream("train_env")
    if cfg.env == "tube":
        return tube.generate(cfg.n_train, seed)
    if cfg.env == "track":
        names = track.stored_layout_names()
        if cfg.n_train >= len(names):
            raise ValueError(f"n_train: at most {len(names) - 1} stored tracks can be used for training")
        return [track.load_layout(n) for n in names[: cfg.n_train]]
    return flappy.generate(cfg.n_train, seed, n_target=cfg.n_target_train)


def eval_envs(cfg: RunConfig):
    seed = cfg.substream("eval_env")
    if cfg.env == "tube":
        return tube.generate(cfg.n_eval, seed)
    if cfg.env == "track":
        names = track.stored_layout_names()[cfg.n_train :]
        return [track.load_layout(n) for n in names[: cfg.n_eval]]
    return flappy.generate(cfg.n_eval, seed, n_target=cfg.n_target)


def hpl_config(cfg: RunConfig) -> pl.HplConfig:
    d = cfg.d_thresh
    return pl.HplConfig(
        N=cfg.N, T=cfg.T, eta=cfg.eta, beta=cfg.beta,
        d_thresh=tuple(d) if isinstance(d, (list, tuple)) else float(d),
        budget=cfg.optimizer_budget(),
    )


def collect_demos(cfg: RunConfig, envs=None):
    envs = train_envs(cfg) if envs is None else envs
    return demonstrate_many(envs, seed=cfg.substream("demo"))


def train(cfg: RunConfig, demos) -> st.Strategy:
    ds = st.build_dataset(demos, cfg.N, cfg.T)
    return st.train_strategy(ds, cfg.fit_config(), eta=cfg.eta, max_rows=cfg.max_rows, seed=cfg.substream("fit"))


def safe_set(cfg: RunConfig):
    policy = policy_for(cfg.env)
    return policy, policy.safe_set(cfg.safe_set_scale)


def run_hpl(cfg: RunConfig, env, strategy, log_sink=None, beta=None) -> Execution:
    policy, ss = safe_set(cfg)
    hc = hpl_config(cfg)
    if beta is not None:
        hc = pl.HplConfig(hc.N, hc.T, hc.eta, beta, hc.d_thresh, hc.budget)
    return pl.run_task(env, strategy, policy, ss, hc, seed=cfg.substream("optimizer"), step_cap=cfg.step_cap,
                       log_sink=log_sink)


def violations(ex: Execution, env) -> int:
    if len(ex.states) <= 1:
        return 0
    return int(np.sum(~np.asarray(env.constraints_ok(ex.states))))


@dataclass
class TaskResult:
    index: int
    env_id: str
    hpl_steps: int
    hpl_complete: bool
    hpl_violations: int
    hpl_safety_steps: int
    hpl_score: float
    safety_steps: int
    reference_steps: int
    reference_score: float

    def row(self):
        return [self.index, self.env_id, self.hpl_steps, int(self.hpl_complete), self.hpl_violations,
                self.hpl_safety_steps, self.hpl_score, self.safety_steps, self.reference_steps, self.reference_score]


COLUMNS = ["task", "env_id", "hpl_steps", "hpl_complete", "hpl_violations", "hpl_safety_mode_steps", "hpl_score",
           "safety_only_steps", "reference_steps", "reference_score"]


def score(env, ex: Execution) -> float:
    if env.family == "flappy":
        return float(env.score(ex.states[-1]))
    return float(ex.duration * env.dt) if ex.complete else float("nan")


def evaluate_task(cfg: RunConfig, i, env, strategy):
    """HPL against safety-only and a reference: the demonstrator for tube and
    track, the centre-tracking baseline for Flappy."""
    policy, _ = safe_set(cfg)
    ex = run_hpl(cfg, env, strategy)
    if env.family == "flappy":
        saf = ex  # the safety policy never crashes, so its score is the cap
        ref = pl.run_center_tracking(env, H=cfg.baseline_horizon, step_cap=cfg.step_cap)
    else:
        saf = pl.run_safety(env, policy, step_cap=cfg.step_cap)
        try:
            ref = demonstrate(env, seed=cfg.substream("demo") + i)
        except DemoError as exc:
            log.warning("reference demonstration failed on %s: %s", env.env_id, exc)
            ref = Execution(env.env_id, env.initial_state()[None], np.empty((0, env.nu)), env.dt, False)
    res = TaskResult(
        i, env.env_id, ex.duration, ex.complete, violations(ex, env), ex.modes.count(pl.SAFETY), score(env, ex),
        saf.duration, ref.duration, score(env, ref),
    )
    return res, ex, ref


def summarize(results, family):
    h = np.array([r.hpl_score for r in results], dtype=float)
    ref = np.array([r.reference_score for r in results], dtype=float)
    out = {
        "family": family,
        "tasks": len(results),
        "violations": int(sum(r.hpl_violations for r in results)),
        "incomplete": int(sum(not r.hpl_complete for r in results)),
        "safety_mode_steps": int(sum(r.hpl_safety_steps for r in results)),
    }
    for name, v in (("hpl", h), ("reference", ref)):
        if v.size:
            out[name] = {"mean": float(np.nanmean(v)), "median": float(np.nanmedian(v)), "min": float(np.nanmin(v)),
                         "max": float(np.nanmax(v))}
    if family != "flappy" and results:
        out["safety_only"] = {"mean": float(np.mean([r.safety_steps for r in results]) * _dt(family))}
    return out


def _dt(family):
    return {"tube": tube.DT, "track": track.DT}.get(family, 1.0)


def verify_safe(cfg: RunConfig):
    policy, ss = safe_set(cfg)
    envs = eval_envs(cfg)[:3] if cfg.env != "track" else [track.load_layout(n) for n in track.stored_layout_names()]
    return verify_invariance(ss, policy, envs, cfg.verify_samples, cfg.verify_horizon, seed=cfg.substream("verify"))


# -- corpus persistence --------------------------------------------------------


def save_demos(demos, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, (ex, env) in enumerate(demos):
        ex.to_csv(d / f"demo_{i:03d}.csv")
        (d / f"env_{i:03d}.json").write_text(json.dumps(env.to_dict()))


def load_demos(directory):
    d = Path(directory)
    out = []
    for p in sorted(d.glob("demo_*.csv")):
        env = env_from_dict(json.loads((d / p.name.replace("demo_", "env_").replace(".csv", ".json")).read_text()))
        out.append((Execution.from_csv(p), env))
    return out
