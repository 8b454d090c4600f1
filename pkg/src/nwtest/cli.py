"""Command-line front end.

Subcommands:

- ``test``      run the aggregated two-sample test on two CSV files
- ``pw``        fit a projection on the full data and print the projected
                1-Wasserstein distance
- ``simulate``  draw one replication of a benchmark model to CSV
- ``bench``     run a Monte Carlo power study from a grid config

All randomness is controlled by ``--seed``; repeated invocations with the
same flags produce byte-identical outputs.  Reports are written atomically
(temp file + rename).  Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .pipeline import TestConfig, multi_split_test
from .simbench import ModelSpec, PowerCell, gen_model, power_study
from .statistic import write_json_atomic
from .stiefel import l0_fit_projection, manpg_fit_projection
from .transport import empirical_projected_w1

__all__ = ["ParseError", "load_dataset", "main"]

_VERSION = "nwtest 0.1.0"


class ParseError(ValueError):
    """Raised for malformed input tables, with file position context."""


def load_dataset(path: str, delimiter: str = ",") -> np.ndarray:
    """Parse a rectangular numeric CSV, auto-detecting a single header row.

    The first row is treated as a header exactly when any of its cells
    fails to parse as a number.  Errors carry 1-based line numbers and,
    for bad cells, (row, column) positions.
    """
    with open(path) as handle:
        lines = [line.rstrip("\n\r") for line in handle]
    lines = [line for line in lines if line.strip() != ""]
    if not lines:
        raise ParseError(f"{path}: file is empty")

    def parse_row(line):
        cells = line.split(delimiter)
        try:
            return [float(c) for c in cells]
        except ValueError:
            return None

    first = parse_row(lines[0])
    start = 0 if first is not None else 1
    if start == 1 and len(lines) == 1:
        raise ParseError(f"{path}: header only, no data rows")

    rows = []
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = line.split(delimiter)
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(
                f"{path}: line {lineno} has {len(cells)} cells, expected {width}")
        row = []
        for col, cell in enumerate(cells, start=1):
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell at (row {lineno}, col {col}): "
                    f"{cell!r}") from None
            if not np.isfinite(val):
                raise ParseError(
                    f"{path}: non-finite cell at (row {lineno}, col {col})")
            row.append(val)
        rows.append(row)
    return np.asarray(rows, dtype=np.float64)


def _save_matrix(matrix: np.ndarray, path: str) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nwtest",
        description="Neural Wasserstein two-sample tests")
    parser.add_argument("--version", action="version", version=_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="run the aggregated test")
    p_test.add_argument("--x", required=True, help="CSV with the X sample")
    p_test.add_argument("--y", required=True, help="CSV with the Y sample")
    p_test.add_argument("--config", help="JSON test configuration")
    p_test.add_argument("--out", help="write the full report as JSON")
    p_test.add_argument("--seed", type=int, default=0)
    p_test.add_argument("--threads", type=int, default=1)

    p_pw = sub.add_parser("pw", help="projected Wasserstein distance")
    p_pw.add_argument("--x", required=True)
    p_pw.add_argument("--y", required=True)
    p_pw.add_argument("--k", type=int, required=True)
    p_pw.add_argument("--rho", type=float, help="l1 penalty level")
    p_pw.add_argument("--omega", type=int, help="l0 sparsity budget")
    p_pw.add_argument("--seed", type=int, default=0)

    p_sim = sub.add_parser("simulate", help="draw one benchmark replication")
    p_sim.add_argument("--model", required=True, choices=["A", "B", "C", "D"])
    p_sim.add_argument("--beta", type=float, required=True)
    p_sim.add_argument("--d", type=int, required=True)
    p_sim.add_argument("--n", type=int, required=True,
                       help="observations per sample")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out-x", required=True)
    p_sim.add_argument("--out-y", required=True)

    p_bench = sub.add_parser("bench", help="Monte Carlo power study")
    p_bench.add_argument("--config", required=True, help="JSON grid config")
    p_bench.add_argument("--out", required=True, help="output CSV path")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--threads", type=int, default=1)
    return parser


def _cmd_test(args) -> int:
    X = load_dataset(args.x)
    Y = load_dataset(args.y)
    if args.config is not None:
        with open(args.config) as handle:
            config = TestConfig.from_dict(json.load(handle))
        if args.seed != 0:
            from dataclasses import replace
            config = replace(config, seed=args.seed)
    else:
        config = TestConfig(seed=args.seed)
    report = multi_split_test(X, Y, config, n_jobs=args.threads)
    print(f"p-value: {report.p:.6g}")
    print(f"decision at alpha={report.alpha}: "
          f"{'reject' if report.reject else 'fail to reject'}")
    if args.out:
        write_json_atomic(report.to_dict(), args.out)
    return 0


def _cmd_pw(args) -> int:
    X = load_dataset(args.x)
    Y = load_dataset(args.y)
    if args.rho is not None and args.omega is not None:
        raise ValueError("--rho and --omega are mutually exclusive")
    if args.omega is not None:
        U, _ = l0_fit_projection(X, Y, args.k, args.omega, seed=args.seed)
    else:
        U, _ = manpg_fit_projection(X, Y, args.k, rho=args.rho or 0.0,
                                    seed=args.seed)
    print(f"{empirical_projected_w1(X, Y, U):.10g}")
    return 0


def _cmd_simulate(args) -> int:
    spec = ModelSpec(model=args.model, beta=args.beta, d=args.d,
                     n_x=args.n, n_y=args.n, seed=args.seed)
    X, Y = gen_model(spec)
    _save_matrix(X, args.out_x)
    _save_matrix(Y, args.out_y)
    print(f"wrote {X.shape[0]}x{X.shape[1]} to {args.out_x} and "
          f"{Y.shape[0]}x{Y.shape[1]} to {args.out_y}")
    return 0


_BENCH_KEYS = {"grid", "n_reps", "alpha", "n_perms", "test"}


def _cmd_bench(args) -> int:
    with open(args.config) as handle:
        payload = json.load(handle)
    unknown = set(payload) - _BENCH_KEYS
    if unknown:
        raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
    if "grid" not in payload or not payload["grid"]:
        raise ValueError("bench config needs a nonempty grid")
    grid = []
    for entry in payload["grid"]:
        extra = set(entry) - {"method", "model", "beta", "d", "n_x", "n_y"}
        if extra:
            raise ValueError(f"unknown grid keys: {sorted(extra)}")
        grid.append(PowerCell(**entry))
    test_config = TestConfig.from_dict(payload.get("test", {"n_splits": 1}))
    table = power_study(
        grid, n_reps=int(payload.get("n_reps", 100)),
        alpha=float(payload.get("alpha", 0.05)), out_path=args.out,
        seed=args.seed, n_perms=int(payload.get("n_perms", 199)),
        test_config=test_config, n_jobs=args.threads)
    for row in table.rows:
        print(f"{row['method']:>6} {row['model']} beta={row['beta']} "
              f"d={row['d']}: reject_rate={row['reject_rate']:.3f} "
              f"({row['n_failed']} failed)")
    return 0


_DISPATCH = {"test": _cmd_test, "pw": _cmd_pw,
             "simulate": _cmd_simulate, "bench": _cmd_bench}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI diagnostic funnel
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
