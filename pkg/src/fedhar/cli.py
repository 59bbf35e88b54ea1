"""Command line entry point.

    fedhar run --config exp.toml [--seed N] [--out DIR]
    fedhar grid --config exp.toml --grid grid.toml [--out DIR]
    fedhar inspect-skew --config exp.toml --class running --sensor raw_acc

Exit status: 0 success, 2 invalid configuration or arguments, 1 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config, tomllib
from .experiment import format_summary, inspect_skew, run_experiment, run_grid, summarize, summary_csv
from .ingest import IngestError
from .preprocess import PreprocessError

log = logging.getLogger("fedhar")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output_dir)
    result = run_experiment(cfg, out)
    scores = summarize(result)
    print(f"{cfg.mode} run finished ({result.trace.stop_reason}) at virtual t="
          f"{result.trace.completion_time:.1f}s, {result.trace.merges} merges -> {out}")
    print("last-{} m-F1 {:.4f}  BA {:.4f}  F1-{} {:.4f}".format(
        cfg.metrics.summary_window, scores["m-F1"], scores["BA"], cfg.metrics.report_class, scores["F1-R"]))
    return EXIT_OK


def load_grid(path) -> dict:
    """Grid file: a ``[grid]`` table of dotted config paths to value lists."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    extra = sorted(set(raw) - {"grid"})
    if extra:
        raise ConfigError(f"{path}:{extra[0]}", "unknown key (expected only [grid])")
    grid = raw.get("grid", {})
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}", "expected a non-empty list")
    return grid


def cmd_grid(args) -> int:
    cfg = _load(args)
    grid = load_grid(args.grid)
    # validate every cell before running any of them
    from .experiment import expand_grid
    for cell in expand_grid(grid):
        cfg.with_overrides(cell)
    out = Path(args.out or cfg.output_dir)
    rows = run_grid(grid, cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(rows))
    table = format_summary(rows, cfg.mode)
    (out / "summary.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_inspect_skew(args) -> int:
    cfg = _load(args)
    try:
        report = inspect_skew(cfg, args.class_name, args.sensor)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sys.stdout.write(report.to_tsv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedhar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="set every seed (data, model, selection, latency)")
    r.add_argument("--out", help="output directory (default: config output_dir)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("grid", help="run a grid sweep and print last-5 averages")
    g.add_argument("--config", required=True)
    g.add_argument("--grid", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid)

    s = sub.add_parser("inspect-skew", help="per-client feature distribution of one class")
    s.add_argument("--config", required=True)
    s.add_argument("--class", dest="class_name", required=True)
    s.add_argument("--sensor", required=True, help="sensor group name or prefix")
    s.set_defaults(func=cmd_inspect_skew)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IngestError, PreprocessError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
