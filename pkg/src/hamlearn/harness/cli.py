"""``hamlearn`` command line: run, compare and sweep experiments.

Exit codes: 0 when every check passes, 1 on a tolerance failure, 2 on a
configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import SCENARIOS, ConfigError, Tolerance, load_config
from .runner import compare_curves, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "tol", None) is not None:
        t = cfg.tolerance
        cfg = replace(cfg, tolerance=Tolerance(
            args.tol if t.max_abs_dtheta is not None else None,
            args.tol if t.mean_abs_dtheta is not None else None,
            args.tol if t.loss_gap is not None else None,
        ))
    return cfg


def _report(summary: dict, out) -> None:
    status = "PASS" if summary["passed"] else "FAIL"
    print(f"[{status}] {summary['name']}: steps={summary['steps']} "
          f"max|dtheta|={summary['trajectory_max_abs_dtheta']:.3e} "
          f"mean|dtheta|(final)={summary['final_mean_abs_dtheta']:.3e} "
          f"loss gap={summary['max_loss_gap']:.3e}", file=out)


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = args.out if args.out is not None else cfg.output_dir
    res = run_experiment(cfg, out)
    _report(res.summary, sys.stdout)
    if args.json:
        print(json.dumps(res.summary, sort_keys=True))
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_compare(args) -> int:
    for p in (args.a, args.b):
        if not Path(p).is_file():
            print(f"error: no such file: {p}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        rep = compare_curves(args.a, args.b, args.tol)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if rep.passed:
        print(f"[PASS] {rep.rows} rows, max loss gap {rep.max_gap:.3e} <= {rep.tol:.1e}")
        return EXIT_OK
    print(f"[FAIL] first row above {rep.tol:.1e}: row {rep.first_bad_row}; max loss gap {rep.max_gap:.3e}")
    return EXIT_FAIL


def _sweep_one(job):
    cfg, out = job
    return run_experiment(cfg, out).summary


def cmd_sweep(args) -> int:
    jobs = []
    base_out = Path(args.out) if args.out else None
    for path in args.configs:
        cfg = _apply_overrides(load_config(path), args)
        variants = [cfg.with_scenario(s) for s in args.scenarios] if args.scenarios else [cfg]
        for v in variants:
            safe = v.name.replace("@", "_").replace("/", "_")
            out = base_out / safe if base_out else (Path(v.output_dir) / safe if v.output_dir else None)
            jobs.append((v, out))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    else:
        summaries = [_sweep_one(j) for j in jobs]
    for s in summaries:
        _report(s, sys.stdout)
    if base_out:
        base_out.mkdir(parents=True, exist_ok=True)
        (base_out / "sweep.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(s["passed"] for s in summaries) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamlearn", description="Costate-driven online learning vs reference optimizers.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, help="override the weight-init seed")
    r.add_argument("--tol", type=float, help="override every active tolerance")
    r.add_argument("--json", action="store_true", help="also print the summary as JSON")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare the loss columns of two CSV logs")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", type=float, default=1e-9)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="run several configs and/or scenarios")
    s.add_argument("configs", nargs="+")
    s.add_argument("--scenarios", nargs="+", choices=sorted(SCENARIOS), help="re-run each config under these presets")
    s.add_argument("--out", help="root output directory; one sub-directory per run")
    s.add_argument("--seed", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
