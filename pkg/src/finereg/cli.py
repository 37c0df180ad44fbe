"""``finereg`` command line: run a scenario or sweep one of its parameters.

Exit status: 0 on success, 2 when confident criteria disagree somewhere,
1 on any error (bad scenario, failed solve, I/O).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

from . import __version__
from .errors import FineRegError, ScenarioError
from .report import SWEEP_COLUMNS, atomic_write, csv_text, fmt, sweep_rows, write_run
from .scenario import SWEEP_PARAMS, load, run, with_parameter

log = logging.getLogger("finereg")

EXIT_OK, EXIT_ERROR, EXIT_INCONSISTENT = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="finereg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"finereg {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario file (TOML)")
        sp.add_argument("--out", help="output directory (default: the scenario's output.dir)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for sweeps and Monte Carlo (default 1)")
        sp.add_argument("--plots", action="store_true", help="also render PNG figures")

    common(sub.add_parser("run", help="classify every boundary point of a scenario"))
    sw = sub.add_parser("sweep", help="run a scenario over a list of parameter values")
    common(sw)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma-separated values, e.g. 1.0,1.5,2.0")
    return p


def _summary(result):
    for p in result.points:
        votes = " ".join(f"{k}={v}" for k, v in p.votes.items())
        flag = "" if p.consistent else "  [DISAGREEMENT]"
        c = "" if p.c is None else f" c={fmt(p.c)}"
        print(f"point {p.index} y={[round(float(v), 6) for v in p.point.y]}: "
              f"{p.verdict}{c}  ({votes}){flag}")


def cmd_run(args):
    sc = load(args.scenario)
    out = args.out or sc.out_dir
    result = run(sc, threads=args.threads)
    written = write_run(result, out)
    if args.plots or sc.plots:
        from .plotting import write_figures

        written += write_figures(result, out)
    _summary(result)
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK if result.consistent else EXIT_INCONSISTENT


def parse_values(text, param):
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise ScenarioError("empty value list", "--values")
    out = []
    for v in vals:
        try:
            out.append(float(Fraction(v)))
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioError(f"not a number: {v!r}", "--values") from exc
    if param == "h" and any(v <= 0 for v in out):
        raise ScenarioError("grid spacings must be positive", "--values")
    return out


def cmd_sweep(args):
    base = load(args.scenario)
    values = parse_values(args.values, args.param)
    out = args.out or base.out_dir
    # validate every variant before solving anything
    variants = [with_parameter(base, args.param, v) for v in values]

    def one(item):
        i, sc = item
        result = run(sc)
        write_run(result, os.path.join(out, f"{args.param}={fmt(values[i])}"))
        return result

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as ex:
            results = list(ex.map(one, enumerate(variants)))
    else:
        results = [one(item) for item in enumerate(variants)]
    entries = list(zip(values, results))
    atomic_write(os.path.join(out, "sweep.csv"), csv_text(SWEEP_COLUMNS, sweep_rows(args.param, entries)))
    if args.plots or base.plots:
        from .plotting import sweep_figure

        sweep_figure(args.param, entries, os.path.join(out, "sweep.png"))
    for v, r in entries:
        print(f"{args.param}={fmt(v)}")
        _summary(r)
    return EXIT_OK if all(r.consistent for r in results) else EXIT_INCONSISTENT


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_sweep(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (FineRegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
