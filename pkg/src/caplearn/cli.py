"""Command-line front end: ``caplearn {train,eval,verify-safety,export,show-config}``.

Exit codes: 0 success, 2 configuration or checkpoint error, 3 numerical fault.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .evaluate import TRAJECTORY_COLUMNS, evaluate, push_recovery, write_trajectory_csv
from .gp import empty_model
from .ppo import NumericalFault, load_checkpoint, save_checkpoint, train
from .verify import safety_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("caplearn")


class CheckpointError(ValueError):
    pass


def _load_config(args) -> C.ScenarioConfig:
    cfg = C.load(args.config, args.preset)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        section = "eval" if args.command == "eval" else "train"
        overrides[section] = {"episodes": args.episodes}
    return cfg.replace(**overrides) if overrides else cfg


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _start_run(cfg: C.ScenarioConfig, out: Path, command: str, argv) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", C.manifest(cfg, command, argv))
    (out / "config.yaml").write_text(cfg.dump())


# -- train ------------------------------------------------------------------------

def cmd_train(args, argv) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _start_run(cfg, out, "train", argv)
    bundle = C.policy_bundle(cfg)
    hyper = C.gp_hyper(cfg)
    tcfg = C.train_config(cfg)
    state = None
    if args.resume:
        state, blob = load_checkpoint(args.resume, bundle, hyper)
        if blob.get("rng", {}).get("seed") != cfg.seed:
            raise CheckpointError(f"checkpoint was trained with seed {blob.get('rng', {}).get('seed')}, "
                                  f"config has seed {cfg.seed}")
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        for row in (state.history if state else []):
            fh.write(json.dumps(row) + "\n")
    every = cfg.train.trajectory_every

    def on_iteration(metrics, transitions):
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(metrics, default=_json_default) + "\n")
        m = metrics["episode"]
        if (every and (m + 1) % every == 0) or m + 1 == tcfg.episodes:
            write_trajectory_csv(out / "trajectories" / f"train_{m + 1:05d}.csv", transitions)

    extra = {"config_hash": cfg.config_hash()}
    try:
        bundle, history = train(C.env_factory(cfg), bundle, tcfg, cfg.seed, hyper, out, state, on_iteration)
    except (NumericalFault, FloatingPointError) as exc:
        log.error("numerical fault: %s", exc)
        return EXIT_NUMERIC
    final = bundle.train_state
    save_checkpoint(out / "checkpoint_final.json", bundle, final, cfg.seed, extra)
    final.model.save(out / "gp_model.json")
    summary = {"episodes": len(history), "final_return": history[-1]["average_return"] if history else None,
               "terminations": int(sum(h["terminations"] for h in history))}
    print(json.dumps(summary))
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def _restore(cfg: C.ScenarioConfig, checkpoint):
    bundle = C.policy_bundle(cfg)
    hyper = C.gp_hyper(cfg)
    if checkpoint is None:
        return bundle, empty_model(hyper)
    try:
        state, _ = load_checkpoint(checkpoint, bundle, hyper)
    except (KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {checkpoint}: {exc}") from exc
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return bundle, state.model


def cmd_eval(args, argv) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    _start_run(cfg, out, "eval", argv)
    bundle, model = _restore(cfg, args.checkpoint)
    try:
        summary, transitions = evaluate(bundle, C.env_factory(cfg), model, cfg.seed, cfg.eval.episodes)
        if transitions:
            write_trajectory_csv(out / "trajectories" / "eval.csv", transitions)
        pushes = []
        if args.pushes:
            pushes, trajs = push_recovery(bundle, lambda spec: C.env_factory(cfg, spec), model, cfg.seed,
                                          cfg.eval.push_step, cfg.eval.push_duration, cfg.disturbance.mass)
            for name, trans in trajs.items():
                write_trajectory_csv(out / "trajectories" / f"push_{name}.csv", trans, {"case": name})
    except (NumericalFault, FloatingPointError) as exc:
        log.error("numerical fault: %s", exc)
        return EXIT_NUMERIC
    report = {"walking": summary, "push_recovery": pushes, "checkpoint": str(args.checkpoint)}
    _write_json(out / "eval_metrics.json", report)
    print(json.dumps(report, default=_json_default))
    return EXIT_OK


# -- verify-safety -----------------------------------------------------------------

def cmd_verify(args, argv) -> int:
    cfg = _load_config(args)
    if args.samples < 1:
        raise C.ConfigError("--samples", "must be at least 1")
    out = Path(args.out)
    _start_run(cfg, out, "verify-safety", argv)
    report = safety_report(C.lipm_params(cfg), C.step_timing(cfg), C.filter_config(cfg), cfg.safety.capture_steps,
                           args.samples, cfg.seed, cfg.safety.literal_exponent, hyper=C.gp_hyper(cfg))
    _write_json(out / "safety_report.json", report)
    print(json.dumps(report, default=_json_default))
    return EXIT_OK


# -- export ---------------------------------------------------------------------

def _read_metrics(run: Path) -> list[dict]:
    path = run / "metrics.jsonl"
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def cmd_export(args, argv) -> int:
    """Turn run directories into long-format CSVs, one per plot."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = [Path(r) for r in args.runs]
    with open(out / "learning_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "episode", "metric", "value"])
        for run in runs:
            for row in _read_metrics(run):
                for key in ("average_return", "terminations", "mean_asf", "mean_eps"):
                    if key in row:
                        w.writerow([run.name, row["episode"], key, row[key]])
    with open(out / "walking_quality.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "metric", "value"])
        for run in runs:
            path = run / "eval_metrics.json"
            if path.exists():
                walking = json.loads(path.read_text())["walking"]
                for key, value in walking.items():
                    w.writerow([run.name, key, value])
    with open(out / "push_velocity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "case", "step", "axis", "velocity"])
        for run in runs:
            for path in sorted((run / "trajectories").glob("push_*.csv")):
                with open(path, newline="") as src:
                    for row in csv.DictReader(src):
                        for axis in ("xd", "yd"):
                            w.writerow([run.name, row["case"], row["step"], axis, row[axis]])
    with open(out / "footsteps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "source", *TRAJECTORY_COLUMNS])
        for run in runs:
            for path in sorted((run / "trajectories").glob("*.csv")):
                if path.name.startswith("push_"):
                    continue
                with open(path, newline="") as src:
                    for row in csv.DictReader(src):
                        w.writerow([run.name, path.stem, *(row[c] for c in TRAJECTORY_COLUMNS)])
    print(json.dumps({"out": str(out), "runs": [str(r) for r in runs]}))
    return EXIT_OK


def cmd_show_config(args, argv) -> int:
    cfg = _load_config(args)
    sys.stdout.write(cfg.dump())
    return EXIT_OK


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caplearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario(p):
        p.add_argument("--config", type=Path, help="YAML scenario file")
        p.add_argument("--preset", choices=C.PRESETS + ("custom",), help="robot preset (overrides the file's)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="run the policy learning loop")
    scenario(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--episodes", type=int)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    scenario(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--checkpoint", type=Path, help="omit to evaluate the untrained policy")
    p.add_argument("--episodes", type=int)
    p.add_argument("--no-pushes", dest="pushes", action="store_false", help="skip the three push cases")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-safety", help="audit the safe set and the safety filter")
    scenario(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="plot-ready CSVs from run directories")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("show-config", help="print the effective configuration")
    scenario(p)
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "config", None) is None and getattr(args, "preset", None) is None and args.command != "export":
        args.preset = "draco_walking"
    try:
        return args.func(args, argv)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFault, FloatingPointError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
