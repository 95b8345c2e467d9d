# Command-line entry points: train / evaluate / certify / gradcheck.
# Exit codes: 0 success, 2 config error, 3 certification or gradient-check
# failure, 4 I/O error.
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .certify import run_certification
from .config import ConfigError, ExperimentConfig, echo_config, load_config, resolve_config
from .evaluate import evaluate_checkpoint
from .gradcheck import run_gradcheck
from .train import train_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_IO = 4


def _out_dir(cli_out: str | None, cfg: ExperimentConfig | None) -> Path:
    env_out = os.environ.get("ERNIE_LAB_OUT")
    if cli_out:
        return Path(cli_out)
    if env_out:
        return Path(env_out)
    if cfg is not None:
        return Path(cfg["paths"]["out_dir"])
    return Path("runs")


def _load(path: str, seed_override: int | None = None) -> ExperimentConfig:
    cfg = load_config(path)
    if seed_override is not None:
        raw = dict(cfg.raw)
        raw["seeds"] = [seed_override]
        cfg = resolve_config(raw)
    return cfg


def cmd_train(args) -> int:
    try:
        cfg = _load(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args.out, cfg)
    try:
        echo_config(cfg, out)
        results = train_run(cfg, out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for r in results:
        print(f"trained: {r['out_dir']} (final checkpoint {r['final_checkpoint']})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args.out, cfg) / "eval"
    try:
        doc = evaluate_checkpoint(cfg, args.checkpoint, out)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for row in doc["specs"]:
        print(f"{row['spec']} mean={row['mean']:.4f} p50={row['p50']:.4f}")
    print(f"results: {out / 'results.csv'}")
    return EXIT_OK


def cmd_certify(args) -> int:
    out = _out_dir(args.out, None)
    report = run_certification(n_instances=args.instances, seed=args.seed)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "theory_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for key in ("theorem1", "theorem2", "theorem3", "negative_control"):
        print(f"{key}: {'pass' if report[key]['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    out = _out_dir(args.out, None)
    report = run_gradcheck(seed=args.seed)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for key in ("net_grads", "hvp", "stackelberg"):
        print(f"{key}: {'pass' if report[key]['passed'] else 'FAIL'}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ernie-lab",
                                description="Adversarially regularized MARL lab")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train per-seed runs from a config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="perturbation sweep on a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_evaluate)

    c = sub.add_parser("certify", help="run the theorem certification suites")
    c.add_argument("--instances", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_certify)

    g = sub.add_parser("gradcheck", help="run the finite-difference suites")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
