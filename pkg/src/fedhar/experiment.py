"""Run orchestration: data preparation, single runs, grids and artifacts."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, dumps, to_dict
from .federation import RunTrace, run
from .ingest import generate_synthetic, load_clients, select_features
from .metrics import MetricsRecord, format_trace, skew_report
from .neural import BACKEND, MlpArchitecture
from .neural import snapshot
from .preprocess import AugmentationPlan, PreparedData, prepare

log = logging.getLogger(__name__)


def load_tables(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "synthetic":
        return generate_synthetic(d.synthetic)
    tables = load_clients(d.directory)
    tables, _ = select_features(tables, d.missing_threshold)
    return tables


def prepare_data(cfg: ExperimentConfig, tables=None) -> PreparedData:
    d = cfg.data
    tables = load_tables(cfg) if tables is None else tables
    plan = AugmentationPlan(d.augmentation, dict(d.replication), d.noise_mean, d.noise_std)
    return prepare(tables, d.scaling, plan, d.test_scheme, d.holdout_clients, cfg.seeds.data)


@dataclass
class RunResult:
    config: ExperimentConfig
    trace: RunTrace
    data: PreparedData
    out_dir: Path | None
    wall_seconds: float

    @property
    def class_names(self):
        return self.data.class_names


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir=None, tables=None) -> RunResult:
    """Run one experiment and, if ``out_dir`` is given, write its artifacts.

    Artifacts: ``metrics.csv`` (central and mean distributed records),
    ``clients.csv`` (per-client validation records), ``final_params.bin``,
    ``events.tsv`` and ``manifest.json``.
    """
    start = time.perf_counter()
    data = prepare_data(cfg, tables)
    trace = run(data, cfg)
    wall = time.perf_counter() - start
    result = RunResult(cfg, trace, data, Path(out_dir) if out_dir is not None else None, wall)
    if out_dir is not None:
        write_artifacts(result)
    return result


def write_artifacts(result: RunResult) -> None:
    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg, trace = result.config, result.trace
    names = result.class_names
    (out / "metrics.csv").write_text(format_trace(trace.records, names))
    (out / "clients.csv").write_text(format_trace(trace.client_records, names, with_client=True))
    arch = MlpArchitecture.for_task(len(result.data.feature_names), len(names), cfg.model.hidden,
                                    cfg.model.leaky_slope)
    snapshot.save(out / "final_params.bin", arch, trace.params)
    if cfg.simulation.write_events:
        trace.clock.dump_trace(out / "events.tsv")
    (out / "config.toml").write_text(dumps(cfg))
    files = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    manifest = {
        "config_hash": config_hash(cfg),
        "seeds": to_dict(cfg)["seeds"],
        "mode": cfg.mode,
        "versions": {"fedhar": __version__, "kernel_backend": BACKEND, "numpy": np.__version__,
                     "python": platform.python_version()},
        "wall_clock_seconds": round(result.wall_seconds, 3),
        "virtual_completion_time_s": trace.completion_time,
        "stop_reason": trace.stop_reason,
        "merges": trace.merges,
        "server_busy_time_s": trace.busy_time,
        "server_actions": trace.server_counts,
        "clients": [c.client_id for c in result.data.clients],
        "holdout_clients": result.data.holdout,
        "files": {name: _sha256(out / name) for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- summaries

def last_k_mean(records: Sequence[MetricsRecord], class_index: int, k: int = 5) -> dict[str, float]:
    """Mean m-F1, BA and report-class F1 over the last ``k`` central records."""
    central = [r for r in records if r.vantage == "central"][-k:]
    if not central:
        raise ValueError("trace has no central records")
    return {
        "m-F1": float(np.mean([r.macro_f1 for r in central])),
        "BA": float(np.mean([r.balanced_accuracy for r in central])),
        "F1-R": float(np.mean([r.per_class_f1[class_index] for r in central])),
    }


def report_class_index(cfg: ExperimentConfig, class_names: Sequence[str]) -> int:
    name = cfg.metrics.report_class
    if name in class_names:
        return list(class_names).index(name)
    log.warning("report class %r not in %s; using the rarest training class", name, list(class_names))
    return -1


def summarize(result: RunResult) -> dict[str, float]:
    idx = report_class_index(result.config, result.class_names)
    if idx < 0:
        counts = sum(np.bincount(c.y_train, minlength=len(result.class_names)) for c in result.data.clients)
        idx = int(np.argmin(counts))
    return last_k_mean(result.trace.records, idx, result.config.metrics.summary_window)


def expand_grid(grid: dict[str, Sequence[Any]]) -> list[dict[str, Any]]:
    """Cartesian product of dotted-path value lists, in key order."""
    if not grid:
        return [{}]
    for key, values in grid.items():
        if not isinstance(values, (list, tuple)) or not values:
            raise ValueError(f"grid entry {key!r} needs a non-empty list of values")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class GridRow:
    cell: dict[str, Any]
    scores: dict[str, float]
    out_dir: Path | None


def run_grid(grid: dict[str, Sequence[Any]], base: ExperimentConfig, out_dir=None) -> list[GridRow]:
    """Run every cell; cells share the loaded tables but nothing mutable."""
    tables = load_tables(base)
    rows = []
    for i, cell in enumerate(expand_grid(grid)):
        cfg = base.with_overrides(cell)
        cell_dir = Path(out_dir) / f"cell_{i:03d}" if out_dir is not None else None
        log.info("grid cell %d: %s", i, cell)
        result = run_experiment(cfg, cell_dir, tables)
        rows.append(GridRow(cell, summarize(result), cell_dir))
    return rows


def format_summary(rows: Sequence[GridRow], mode: str = "") -> str:
    """Table with one column per grid cell and one row per metric."""
    if not rows:
        return ""
    keys = list(rows[0].cell)
    label = mode.upper() if mode else ""
    width = max(12, *(len(k) for k in keys)) if keys else 12
    lines = []
    for k in keys:
        short = k.split(".")[-1]
        lines.append(f"{'':<6}{short:>{width}} | " + " ".join(f"{str(r.cell[k]):>8}" for r in rows))
    lines.append("-" * len(lines[-1]) if lines else "")
    for metric in ("m-F1", "BA", "F1-R"):
        lines.append(f"{label:<6}{metric:>{width}} | " + " ".join(f"{r.scores[metric]:>8.2f}" for r in rows))
    return "\n".join(lines) + "\n"


def summary_csv(rows: Sequence[GridRow]) -> str:
    keys = list(rows[0].cell) if rows else []
    out = [",".join(keys + ["m_f1", "ba", "f1_report"])]
    for r in rows:
        out.append(",".join([str(r.cell[k]) for k in keys] +
                            [format(r.scores[m], ".10g") for m in ("m-F1", "BA", "F1-R")]))
    return "\n".join(out) + "\n"


def inspect_skew(cfg: ExperimentConfig, class_name: str, sensor: str):
    """Box statistics of one class on one sensor group, per client, after scaling.

    Augmentation is disabled so that only original samples are described.
    """
    cfg = cfg.with_overrides({"data.augmentation": "none"})
    data = prepare_data(cfg)
    if class_name not in data.class_names:
        raise ValueError(f"unknown class {class_name!r}; have {', '.join(data.class_names)}")
    cols = [j for j, name in enumerate(data.feature_names) if name.split(":", 1)[0].startswith(sensor)]
    if not cols:
        groups = sorted({n.split(":", 1)[0] for n in data.feature_names})
        raise ValueError(f"no sensor group matches {sensor!r}; have {', '.join(groups)}")
    return skew_report(data.clients, data.class_names.index(class_name), cols,
                       data.feature_names, data.class_names)
