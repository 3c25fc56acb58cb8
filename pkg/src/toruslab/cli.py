"""Command line entry point: ``toruslab run|hodge|lattice|map|cover|omega|sweep``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import convergence as cv
from .errors import ConfigError, TorusLabError
from .pipeline import RunConfig, Run, dedupe_anchors, lattice_report, load_config, with_overrides
from .report import jsonable

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2

SUBCOMMAND_STAGES = {
    "run": ("hodge", "lattice", "map", "cover", "omega", "sweep"),
    "hodge": ("hodge",),
    "lattice": ("lattice",),
    "map": ("map",),
    "cover": ("cover",),
    "omega": ("omega",),
    "sweep": ("sweep",),
}


def thread_cap() -> int:
    raw = os.environ.get("TORUSLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TORUSLAB_THREADS must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toruslab", description="Harmonic-map diagnostics for metrics on the 3-torus.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_STAGES:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--grid", type=int, help="override grid resolution N")
        s.add_argument("--seed", type=int, help="override random seed")
        s.add_argument("--tol", type=float, help="override solver tolerance")
        if name == "lattice":
            s.add_argument("--gram", help="JSON file holding a bare 3x3 Gram matrix")
        if name == "cover":
            s.add_argument("--eta", type=float, help="neighbourhood radius for the covering constant")
    return p


def write_report(out: Path, report: dict, verdicts: list, rows=()) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report = dict(report)
    report["verdicts"] = verdicts
    report["passed"] = all(v.passed for v in verdicts)
    text = json.dumps(jsonable(report), sort_keys=True, indent=2)
    (out / "report.json").write_text(text + "\n")
    cv.write_sweep_csv(out / "sweep.csv", rows)


def _read_gram(path: str) -> np.ndarray:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if isinstance(data, dict):
        data = data.get("gram")
    Q = np.asarray(data, dtype=float)
    if Q.size == 9:
        Q = Q.reshape(3, 3)
    if Q.shape != (3, 3):
        raise ConfigError(f"{path}: expected a 3x3 Gram matrix, got shape {Q.shape}")
    return Q


def execute(args) -> int:
    out = Path(args.out)
    if args.command == "lattice" and args.gram:
        block, verdicts = lattice_report(_read_gram(args.gram))
        write_report(out, {"lattice": block}, verdicts)
        return EXIT_OK if all(v.passed for v in verdicts) else EXIT_VERDICT
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    cfg = with_overrides(cfg, N=args.grid, seed=args.seed, tol=args.tol, workers=thread_cap())
    if getattr(args, "eta", None) is not None:
        if args.eta <= 0:
            raise ConfigError(f"--eta must be positive, got {args.eta}")
        cfg = with_overrides(cfg, eta=args.eta)
    run = Run(cfg).run_stages(SUBCOMMAND_STAGES[args.command])
    verdicts = dedupe_anchors(run.verdicts)
    res = run.sweep_result
    write_report(out, run.report, verdicts, res.rows if res is not None else ())
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_VERDICT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return execute(args)
    except TorusLabError as exc:
        print(f"toruslab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
