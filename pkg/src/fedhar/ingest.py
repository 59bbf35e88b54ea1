"""Per-client table loading, sensor-group selection and synthetic non-IID data.

Input directory layout: one ``<client_id>.csv`` (optionally ``.csv.gz``) per
client, or a ``manifest.json`` mapping client ids to file names.  The header
names every column; ``timestamp`` is optional, label columns start with
``label:``, ``label_source`` is ignored and everything else is a feature.
Empty cells and ``nan`` are missing values.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

# (short name, Extrasensory label column); order fixes class indices
ACTIVITY_LABELS = (
    ("lying", "label:LYING_DOWN"),
    ("sitting", "label:SITTING"),
    ("standing", "label:OR_standing"),
    ("walking", "label:FIX_walking"),
    ("running", "label:FIX_running"),
    ("bicycling", "label:BICYCLING"),
)
CLASS_NAMES = tuple(name for name, _ in ACTIVITY_LABELS)

_IGNORED_COLUMNS = {"timestamp", "label_source"}
_MISSING = {"", "nan", "NaN", "NA"}


class IngestError(ValueError):
    pass


@dataclass
class RawClientTable:
    """Rows of one client: timestamps, features (NaN = missing) and class indices."""

    client_id: str
    timestamps: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...] = CLASS_NAMES
    dropped_rows: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        n = self.labels.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n or self.timestamps.shape != (n,):
            raise IngestError(f"{self.client_id}: row counts disagree")
        if self.features.shape[1] != len(self.feature_names):
            raise IngestError(f"{self.client_id}: feature arity {self.features.shape[1]} "
                              f"!= {len(self.feature_names)} names")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise IngestError(f"{self.client_id}: timestamps are not non-decreasing")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise IngestError(f"{self.client_id}: label index out of range")

    def __len__(self):
        return self.labels.shape[0]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))


def sensor_group(feature_name: str) -> str:
    """``raw_acc:magnitude_stats:mean`` -> ``raw_acc``."""
    return feature_name.split(":", 1)[0]


@dataclass(frozen=True)
class FeatureSchema:
    feature_names: tuple[str, ...]
    sensor_groups: tuple[tuple[str, int, int], ...]
    class_names: tuple[str, ...] = CLASS_NAMES
    # indices into the columns of the tables the schema was derived from
    selected_columns: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(set(self.selected_columns)) != len(self.selected_columns):
            raise IngestError("selected columns must be unique")
        if len(self.class_names) < 1:
            raise IngestError("schema needs at least one class")

    @classmethod
    def from_feature_names(cls, names: Sequence[str], class_names=CLASS_NAMES) -> "FeatureSchema":
        return cls(tuple(names), group_ranges(names), tuple(class_names), tuple(range(len(names))))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def group_columns(self, group: str) -> list[int]:
        for name, start, stop in self.sensor_groups:
            if name == group:
                return list(range(start, stop))
        raise KeyError(group)


def group_ranges(names: Sequence[str]) -> tuple[tuple[str, int, int], ...]:
    """Contiguous runs of equal sensor group, as ``(group, start, stop)``."""
    out = []
    for i, name in enumerate(names):
        g = sensor_group(name)
        if out and out[-1][0] == g and out[-1][2] == i:
            out[-1] = (g, out[-1][1], i + 1)
        else:
            out.append((g, i, i + 1))
    return tuple(out)


# ---------------------------------------------------------------- loading

def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def _client_files(data_dir: Path) -> list[tuple[str, Path]]:
    manifest = data_dir / "manifest.json"
    if manifest.exists():
        mapping = json.loads(manifest.read_text())
        if not isinstance(mapping, dict):
            raise IngestError(f"{manifest}: expected an object mapping client id to file name")
        files = [(str(cid), data_dir / fname) for cid, fname in mapping.items()]
    else:
        files = []
        for path in data_dir.iterdir():
            if path.name.endswith(".csv") or path.name.endswith(".csv.gz"):
                files.append((path.name.split(".", 1)[0], path))
    files.sort(key=lambda item: item[0])
    if not files:
        raise IngestError(f"{data_dir}: no client CSV files")
    return files


def _parse_cell(text: str, where: str) -> float:
    text = text.strip()
    if text in _MISSING:
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"{where}: cannot parse {text!r} as a number") from None


def load_client(path, client_id: str, class_labels=ACTIVITY_LABELS,
                feature_names: Sequence[str] | None = None) -> RawClientTable:
    """Read one client CSV.

    Rows whose primary label flags select zero or several classes are
    dropped; the count is kept in ``dropped_rows``.
    """
    path = Path(path)
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        label_pos = []
        for _, column in class_labels:
            if column not in header:
                raise IngestError(f"{path}: missing label column {column!r}")
            label_pos.append(header.index(column))
        feat_pos = [i for i, h in enumerate(header)
                    if h not in _IGNORED_COLUMNS and not h.startswith("label:")]
        names = tuple(header[i] for i in feat_pos)
        if feature_names is not None and names != tuple(feature_names):
            raise IngestError(f"{path}: feature columns differ from the other clients "
                              f"({len(names)} vs {len(feature_names)})")
        ts_pos = header.index("timestamp") if "timestamp" in header else None

        rows, labels, stamps = [], [], []
        dropped = 0
        for line_no, cells in enumerate(reader, start=2):
            if not cells:
                continue
            where = f"{path}:{line_no}"
            if len(cells) != len(header):
                raise IngestError(f"{where}: expected {len(header)} cells, found {len(cells)}")
            flags = [_parse_cell(cells[i], where) for i in label_pos]
            hits = [k for k, f in enumerate(flags) if f == f and f != 0.0]
            if len(hits) != 1:
                dropped += 1
                continue
            rows.append([_parse_cell(cells[i], where) for i in feat_pos])
            labels.append(hits[0])
            stamps.append(_parse_cell(cells[ts_pos], where) if ts_pos is not None else float(len(stamps)))

    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return RawClientTable(client_id, np.array(stamps), features, np.array(labels, dtype=np.int64),
                          names, tuple(n for n, _ in class_labels), dropped)


def load_clients(data_dir, schema: FeatureSchema | None = None,
                 class_labels=ACTIVITY_LABELS) -> list[RawClientTable]:
    """Load every client of ``data_dir`` in client-id order.

    With a ``schema`` the tables are reduced to its feature columns.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise IngestError(f"{data_dir}: no such directory")
    tables: list[RawClientTable] = []
    for cid, path in _client_files(data_dir):
        ref = tables[0].feature_names if tables else None
        tables.append(load_client(path, cid, class_labels, ref))
    total_dropped = sum(t.dropped_rows for t in tables)
    if total_dropped:
        log.info("dropped %d rows without exactly one primary label", total_dropped)
    if schema is not None:
        tables = [restrict(t, schema) for t in tables]
    return tables


def restrict(table: RawClientTable, schema: FeatureSchema) -> RawClientTable:
    index = {name: i for i, name in enumerate(table.feature_names)}
    try:
        cols = [index[name] for name in schema.feature_names]
    except KeyError as exc:
        raise IngestError(f"{table.client_id}: schema feature {exc.args[0]!r} not present") from None
    return RawClientTable(table.client_id, table.timestamps, table.features[:, cols], table.labels,
                          schema.feature_names, table.class_names, table.dropped_rows)


def select_features(tables: Sequence[RawClientTable], missing_threshold: float = 0.6
                    ) -> tuple[list[RawClientTable], FeatureSchema]:
    """Drop every sensor group with a feature missing in more than the threshold.

    Missing fractions are pooled over all clients.
    """
    if not 0 < missing_threshold <= 1:
        raise IngestError("missing_threshold must lie in (0, 1]")
    if not tables:
        raise IngestError("no client tables")
    names = tables[0].feature_names
    missing = np.zeros(len(names))
    total = 0
    for t in tables:
        if t.feature_names != names:
            raise IngestError(f"{t.client_id}: feature columns differ from {tables[0].client_id}")
        missing += np.isnan(t.features).sum(axis=0)
        total += len(t)
    fraction = missing / max(total, 1)
    bad_groups = {sensor_group(n) for n, f in zip(names, fraction) if f > missing_threshold}
    keep = [i for i, n in enumerate(names) if sensor_group(n) not in bad_groups]
    if not keep:
        raise IngestError("every sensor group exceeds the missing-value threshold")
    if bad_groups:
        log.info("dropping sensor groups %s", ", ".join(sorted(bad_groups)))
    kept_names = tuple(names[i] for i in keep)
    schema = FeatureSchema(kept_names, group_ranges(kept_names), tables[0].class_names, tuple(keep))
    reduced = [RawClientTable(t.client_id, t.timestamps, t.features[:, keep], t.labels,
                              kept_names, t.class_names, t.dropped_rows) for t in tables]
    return reduced, schema


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    """Class-conditional Gaussian clients with label, quantity and feature skew.

    Label skew comes either from explicit per-client ``label_proportions`` or
    from a Dirichlet draw with ``label_concentration`` around ``class_shares``;
    in the Dirichlet case the per-client proportions are rescaled so that the
    realised global class shares match ``class_shares``.

    Class means are drawn from N(0, class_separation^2) per coordinate unless
    ``class_means`` fixes them explicitly (one row per class).
    """

    client_count: int = 8
    class_count: int = 4
    feature_dim: int = 16
    samples_per_client: int | tuple[int, ...] = 250
    label_concentration: float = 0.5
    label_proportions: tuple[tuple[float, ...], ...] | None = None
    class_shares: tuple[float, ...] | None = None
    class_separation: float = 1.5
    noise_std: float = 1.0
    feature_shift: float = 0.0
    feature_scale: float = 0.0
    missing_rate: float = 0.0
    group_size: int = 4
    class_names: tuple[str, ...] | None = None
    class_means: tuple[tuple[float, ...], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("client_count", "class_count", "feature_dim", "group_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"synthetic.{name} must be positive")
        counts = self.client_sizes()
        if len(counts) != self.client_count or min(counts) < 1:
            raise ValueError("synthetic.samples_per_client must give a positive count per client")
        if self.label_proportions is not None:
            props = np.asarray(self.label_proportions, dtype=float)
            if props.shape != (self.client_count, self.class_count):
                raise ValueError("synthetic.label_proportions must be client_count x class_count")
            if np.any(props < 0) or np.any(np.abs(props.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("synthetic.label_proportions rows must be non-negative and sum to 1")
        elif not self.label_concentration > 0:
            raise ValueError("synthetic.label_concentration must be positive")
        if self.class_shares is not None:
            shares = np.asarray(self.class_shares, dtype=float)
            if shares.shape != (self.class_count,) or np.any(shares <= 0) or abs(shares.sum() - 1) > 1e-9:
                raise ValueError("synthetic.class_shares must be class_count positive values summing to 1")
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ValueError("synthetic.class_names must name every class")
        if self.class_means is not None:
            means = np.asarray(self.class_means, dtype=float)
            if means.shape != (self.class_count, self.feature_dim) or not np.all(np.isfinite(means)):
                raise ValueError("synthetic.class_means must be class_count x feature_dim finite values")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("synthetic.missing_rate must lie in [0, 1)")
        if min(self.class_separation, self.noise_std, self.feature_shift, self.feature_scale) < 0:
            raise ValueError("synthetic noise/shift/scale magnitudes must be non-negative")

    def client_sizes(self) -> tuple[int, ...]:
        if isinstance(self.samples_per_client, int):
            return (int(self.samples_per_client),) * self.client_count
        return tuple(int(c) for c in self.samples_per_client)

    def names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return tuple(self.class_names)
        if self.class_count <= len(CLASS_NAMES):
            return CLASS_NAMES[:self.class_count]
        return tuple(f"class{k}" for k in range(self.class_count))


def _fit_margins(props: np.ndarray, row_totals: np.ndarray, col_totals: np.ndarray,
                 iters: int = 2000) -> np.ndarray:
    # iterative proportional fitting; zero cells stay zero
    m = props * row_totals[:, None]
    m = np.where(m > 0, m, 0.0) + 1e-12
    for _ in range(iters):
        m *= (col_totals / m.sum(axis=0))[None, :]
        m *= (row_totals / m.sum(axis=1))[:, None]
        if np.abs(m.sum(axis=0) - col_totals).max() < 1e-9 * col_totals.sum():
            break
    return m


def _round_rows(m: np.ndarray, row_totals: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding that preserves every row total."""
    base = np.floor(m).astype(np.int64)
    for i in range(m.shape[0]):
        short = int(row_totals[i] - base[i].sum())
        if short > 0:
            order = np.argsort(-(m[i] - base[i]), kind="stable")
            base[i, order[:short]] += 1
    return base


def synthetic_class_counts(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    sizes = np.asarray(cfg.client_sizes(), dtype=float)
    k = cfg.class_count
    if cfg.label_proportions is not None:
        props = np.asarray(cfg.label_proportions, dtype=float)
        return _round_rows(props * sizes[:, None], sizes)
    shares = np.full(k, 1.0 / k) if cfg.class_shares is None else np.asarray(cfg.class_shares, float)
    props = rng.dirichlet(cfg.label_concentration * k * shares, size=cfg.client_count)
    fitted = _fit_margins(props, sizes, shares * sizes.sum())
    return _round_rows(fitted, sizes)


def generate_synthetic(cfg: SyntheticConfig) -> list[RawClientTable]:
    """Deterministic synthetic clients, one table per client."""
    rng = np.random.default_rng(cfg.seed)
    d, k = cfg.feature_dim, cfg.class_count
    class_means = rng.normal(0.0, cfg.class_separation, size=(k, d))
    if cfg.class_means is not None:
        class_means = np.asarray(cfg.class_means, dtype=float)
    counts = synthetic_class_counts(cfg, rng)
    names = tuple(f"syn{j // cfg.group_size}:f{j}" for j in range(d))
    width = len(str(cfg.client_count - 1))
    tables = []
    for i in range(cfg.client_count):
        shift = rng.normal(0.0, cfg.feature_shift, size=d)
        scale = np.exp(rng.normal(0.0, cfg.feature_scale, size=d))
        labels = np.repeat(np.arange(k), counts[i])
        labels = labels[rng.permutation(labels.size)]
        x = class_means[labels] + rng.normal(0.0, cfg.noise_std, size=(labels.size, d))
        x = x * scale + shift
        if cfg.missing_rate > 0:
            x[rng.random(x.shape) < cfg.missing_rate] = np.nan
        tables.append(RawClientTable(f"client{i:0{width}d}", np.arange(labels.size, dtype=float),
                                     x, labels, names, cfg.names()))
    return tables
