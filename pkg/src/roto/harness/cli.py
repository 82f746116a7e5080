"""``roto`` command line.

Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 numeric abort.
``ROTO_THREADS`` caps the BLAS/OpenMP thread pools (1 gives serial mode).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from threadpoolctl import threadpool_limits

from ..exceptions import ConfigError, NonFiniteError, SweepError
from .analyze import analyze_latents, analyze_mi, analyze_tactile_pred
from .config import load_config, validate_table_ranges
from .metrics_log import write_json
from .sweep import run_sweep
from .trainer import Trainer, latest_checkpoint, run_eval

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("roto")


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roto", description="Desk-scale tactile RL with self-supervised objectives.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a TOML config")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--seed", type=int, default=None, help="overrides [run].seed")
    t.add_argument("--out", type=Path, default=None, help="run directory (default [run].out_dir)")
    t.add_argument("--total-steps", type=_positive, default=None)
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")

    e = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--episodes", type=_positive, default=16)
    e.add_argument("--seed", type=int, default=12345)
    e.add_argument("--out", type=Path, default=None, help="write the JSON report here")
    e.add_argument("--trajectory", type=Path, default=None, help="dump eval steps as JSON lines")

    s = sub.add_parser("sweep", help="TPE hyperparameter sweep over the tunable ranges")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--trials", type=_positive, default=None)
    s.add_argument("--startup", type=int, default=None)
    s.add_argument("--sampler", choices=("tpe", "random"), default=None)
    s.add_argument("--out", type=Path, default=None)

    a = sub.add_parser("analyze", help="representation analyses")
    asub = a.add_subparsers(dest="analysis", required=True)
    mi = asub.add_parser("mi", help="KSG mutual information between latents and true state")
    mi.add_argument("--run", required=True, type=Path, help="run directory or checkpoint")
    mi.add_argument("--samples", type=_positive, default=5000)
    mi.add_argument("--pca", type=_positive, default=13)
    mi.add_argument("--k", type=_positive, default=4)
    mi.add_argument("--seed", type=int, default=0)
    mi.add_argument("--out", type=Path, default=None)
    lat = asub.add_parser("latents", help="export a latent trajectory as JSON lines")
    lat.add_argument("--ckpt", required=True, type=Path)
    lat.add_argument("--episodes", type=_positive, default=1)
    lat.add_argument("--seed", type=int, default=0)
    lat.add_argument("--out", type=Path, default=None)
    tp = asub.add_parser("tactile-pred", help="contact-prediction rates of the decoder")
    tp.add_argument("--run", required=True, type=Path, help="run directory or checkpoint")
    tp.add_argument("--steps", type=_positive, default=64)
    tp.add_argument("--windows", type=_positive, default=4096)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--out", type=Path, default=None)
    return p


def _train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.total_steps is not None:
        cfg = replace(cfg, total_steps=args.total_steps)
    out = args.out or Path(cfg.out_dir)
    if args.resume:
        trainer = Trainer.from_checkpoint(latest_checkpoint(out), cfg, out)
    else:
        trainer = Trainer(cfg, out)
    trainer.run()
    print(json.dumps({"run_dir": str(out), "step": trainer.step, "updates": trainer.updates,
                      "final_objective": _num(trainer.final_objective())}))
    return EXIT_OK


def _eval(args) -> int:
    report = run_eval(args.ckpt, args.episodes, args.seed, args.trajectory)
    if args.out:
        write_json(args.out, report)
    summary = {k: report[k] for k in ("env_id", "step", "episodes", "return_mean", "return_std")}
    summary["metrics"] = {k: {"mean": _num(v["mean"]), "max": _num(v["max"])} for k, v in report["metrics"].items()}
    print(json.dumps(summary))
    return EXIT_OK


def _sweep(args) -> int:
    cfg = load_config(args.config)
    validate_table_ranges(cfg)
    best, trials = run_sweep(cfg, args.out, args.trials, args.startup, args.sampler)
    ok = [t for t in trials if t.ok]
    print(json.dumps({"trials": len(trials), "failed": len(trials) - len(ok),
                      "best_value": max(t.value for t in ok), "best": best.to_dict()["ppo"]}))
    return EXIT_OK


def _analyze(args) -> int:
    if args.analysis == "mi":
        rep = analyze_mi(args.run, args.samples, args.pca, args.k, args.seed, out=args.out)
        print(json.dumps({"mi": rep["mi"], "ranking": rep["ranking"]}))
    elif args.analysis == "latents":
        path = analyze_latents(args.ckpt, args.out, args.episodes, args.seed)
        print(json.dumps({"latents": str(path)}))
    else:
        rep = analyze_tactile_pred(args.run, args.steps, args.windows, args.seed, out=args.out)
        print(json.dumps({"pooled": {k: _num(v) for k, v in rep["pooled"].items()}}))
    return EXIT_OK


def _num(v):
    return v if not isinstance(v, float) or math.isfinite(v) else None


def _threads() -> Optional[int]:
    raw = os.environ.get("ROTO_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ROTO_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"ROTO_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"train": _train, "eval": _eval, "sweep": _sweep, "analyze": _analyze}
    try:
        with threadpool_limits(limits=_threads()):
            return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SweepError as e:
        print(f"sweep failed: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
