"""Command-line entry point: ``aesmpfp {train,eval,ablate,plan-trace}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import AesMpfpError, CheckpointError, ConfigError, NonFiniteValue
from .train import CHECKPOINT_NAME, REPORT_NAME, TABLE_FIELDS, ablation_suite, evaluate, train

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _base_config(args):
    cfg = load_config(args.config)
    if args.scenario is not None:
        cfg = cfg.replace(scenario=args.scenario)
    return cfg


def _seeds(args, cfg):
    return [args.seed] if args.seed is not None else list(cfg.seeds)


def cmd_train(args):
    cfg = _base_config(args)
    out = Path(args.out)
    for seed in _seeds(args, cfg):
        res = train(cfg, seed, out / f"seed_{seed}")
        print(f"seed {seed}: {len(res.curve)} episodes, trailing TCR {res.final_tcr:.3f}, "
              f"checkpoint {res.checkpoint}")
    return 0


def _checkpoint(args):
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    path = Path(args.checkpoint)
    return path / CHECKPOINT_NAME if path.is_dir() else path


def cmd_eval(args):
    cfg = _base_config(args)
    ckpt = _checkpoint(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    report = evaluate(ckpt, cfg, args.episodes, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / REPORT_NAME)
    print(json.dumps(report.aggregates, sort_keys=True))
    return 0


def cmd_ablate(args):
    cfg = _base_config(args)
    if args.seed is not None:
        cfg = cfg.replace(seeds=[args.seed])
    rows = ablation_suite(cfg, args.out, episodes=args.episodes)
    print(",".join(TABLE_FIELDS))
    for r in rows:
        print(",".join(f"{r[k]:.3f}" if isinstance(r[k], float) else str(r[k]) for k in TABLE_FIELDS))
    return 0


def cmd_plan_trace(args):
    cfg = _base_config(args)
    ckpt = _checkpoint(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "plan_trace.jsonl"
    path.unlink(missing_ok=True)
    report = evaluate(ckpt, cfg.replace(mpfp_off_eval=False), args.episodes or 1, seed, trace_path=path)
    print(f"{sum(r['length'] for r in report.records)} planner decisions written to {path}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "plan-trace": cmd_plan_trace}


def build_parser():
    p = argparse.ArgumentParser(prog="aesmpfp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, default=None, help="run config (TOML); defaults when omitted")
        s.add_argument("--seed", type=int, default=None, help="single seed instead of the config's list")
        s.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
        s.add_argument("--scenario", default=None, help="scenario file or bundled name, overriding the config")
        s.add_argument("--checkpoint", default=None, help="checkpoint file or training run directory")
        s.add_argument("--episodes", type=int, default=None, help="evaluation episodes")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteValue as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except AesMpfpError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
