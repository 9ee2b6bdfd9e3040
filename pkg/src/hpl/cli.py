"""Command line driver: ``hpl {demo-gen,train,run,eval,verify-safe}``.

Exit codes: 0 on success, 2 on a configuration error, 3 on a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from hpl import experiment as xp, plots
from hpl import strategy as st
from hpl.config import RunConfig, content_hash
from hpl.errors import ConfigError, HPLError

log = logging.getLogger("hpl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _paths(cfg):
    root = Path(cfg.out)
    return root, root / "demos", root / "strategy"


def _write_run_meta(cfg, directory, strategy_dir=None):
    directory.mkdir(parents=True, exist_ok=True)
    cfg.save(directory / "config.json")
    (directory / "seed.txt").write_text(f"{cfg.seed}\n")
    if strategy_dir is not None and Path(strategy_dir).exists():
        (directory / "strategy.sha256").write_text(content_hash(strategy_dir) + "\n")


def cmd_demo_gen(cfg: RunConfig):
    _, demo_dir, _ = _paths(cfg)
    demos = xp.collect_demos(cfg)
    if not demos:
        raise HPLError("every demonstration failed")
    xp.save_demos(demos, demo_dir)
    _write_run_meta(cfg, demo_dir)
    print(f"wrote {len(demos)} demonstrations to {demo_dir}")
    return demo_dir


def cmd_train(cfg: RunConfig):
    _, demo_dir, strat_dir = _paths(cfg)
    if not demo_dir.exists():
        cmd_demo_gen(cfg)
    demos = xp.load_demos(demo_dir)
    ds = st.build_dataset(demos, cfg.N, cfg.T)
    ds.to_csv(Path(cfg.out) / "dataset.csv")
    s = st.train_strategy(ds, cfg.fit_config(), eta=cfg.eta, max_rows=cfg.max_rows, seed=cfg.substream("fit"))
    s.save(strat_dir)
    print(f"trained {len(s.models)} GPs on {len(ds)} rows; strategy in {strat_dir}")
    return strat_dir


def _strategy(cfg):
    _, _, strat_dir = _paths(cfg)
    if not (strat_dir / "manifest.json").exists():
        cmd_train(cfg)
    return st.Strategy.load(strat_dir), strat_dir


def cmd_run(cfg: RunConfig):
    s, strat_dir = _strategy(cfg)
    run_dir = Path(cfg.out) / "run"
    _write_run_meta(cfg, run_dir, strat_dir)
    summary = []
    for i, env in enumerate(xp.eval_envs(cfg)):
        with (run_dir / f"steps_{i:03d}.jsonl").open("w") as fh:
            def sink(entry, fh=fh):
                entry = dict(entry, wall_time=None)  # keep logs reproducible
                fh.write(json.dumps(entry) + "\n")

            ex = xp.run_hpl(cfg, env, s, log_sink=sink)
        ex.to_csv(run_dir / f"execution_{i:03d}.csv")
        summary.append({
            "task": i, "env_id": env.env_id, "steps": ex.duration, "complete": ex.complete,
            "violations": xp.violations(ex, env), "safety_mode_steps": ex.modes.count("safety"),
            "score": xp.score(env, ex),
        })
    doc = {"family": cfg.env, "seed": cfg.seed, "tasks": summary}
    (run_dir / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    print(json.dumps(doc, sort_keys=True))
    return doc


def cmd_eval(cfg: RunConfig):
    s, strat_dir = _strategy(cfg)
    eval_dir = Path(cfg.out) / "eval"
    _write_run_meta(cfg, eval_dir, strat_dir)
    results, first = [], None
    for i, env in enumerate(xp.eval_envs(cfg)):
        res, ex, ref = xp.evaluate_task(cfg, i, env, s)
        results.append(res)
        if first is None:
            first = (env, ex, ref)
        log.info("task %d: %s", i, res)
    with (eval_dir / "table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(xp.COLUMNS)
        for r in results:
            w.writerow(r.row())
    summary = xp.summarize(results, cfg.env)
    (eval_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    plots.comparison(results, cfg.env, eval_dir / "comparison.png")
    if first is not None:
        env, ex, ref = first
        ref_name = "centre tracking" if cfg.env == "flappy" else "demonstrator"
        plots.trajectory(env, {"HPL": ex, ref_name: ref}, eval_dir / "trajectory.png")
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_verify_safe(cfg: RunConfig):
    out = Path(cfg.out) / "verify"
    _write_run_meta(cfg, out)
    report = xp.verify_safe(cfg)
    (out / "report.json").write_text(report.to_json())
    print(f"{cfg.env}: {len(report.violations)} violations over {report.n_samples} samples x {report.horizon} steps")
    return report


COMMANDS = {
    "demo-gen": cmd_demo_gen,
    "train": cmd_train,
    "run": cmd_run,
    "eval": cmd_eval,
    "verify-safe": cmd_verify_safe,
}


def build_parser():
    p = argparse.ArgumentParser(prog="hpl", description="Hierarchical predictive learning experiments")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--env", choices=["tube", "track", "flappy"], help="environment family (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> RunConfig:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
    for key in ("seed", "out", "env"):
        v = getattr(args, key)
        if v is not None:
            doc[key] = v
    return RunConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HPLError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
