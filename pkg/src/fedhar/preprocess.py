"""Client partitioning, feature statistics, scaling, augmentation and test sets."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .ingest import RawClientTable

log = logging.getLogger(__name__)

# additive replica counts per sample for the "base" scheme
DEFAULT_REPLICATION = {"running": 20, "bicycling": 8, "standing": 1, "walking": 2}
AUGMENTATION_MODES = ("none", "base", "balanced")
SCALING_MODES = ("local", "global")
TEST_SCHEMES = ("fair", "holdout")


class PreprocessError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class ClientDataset:
    client_id: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    class_names: tuple[str, ...]

    @property
    def n_samples(self) -> int:
        """n_i: training samples, after augmentation if any was applied."""
        return int(self.y_train.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.x_train.shape[1])

    def all_data(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.concatenate([self.x_train, self.x_val, self.x_test]),
                np.concatenate([self.y_train, self.y_val, self.y_test]))


@dataclass
class TestSet:
    x: np.ndarray
    y: np.ndarray
    source: np.ndarray  # client id per row

    def __len__(self):
        return int(self.y.shape[0])


def partition_client(table: RawClientTable, seed) -> ClientDataset:
    """Shuffled 64/16/20 train/val/test split, 80/20 applied twice."""
    n = len(table)
    if n < 5:
        raise PreprocessError(f"{table.client_id}: {n} rows cannot populate train/val/test")
    order = np.random.default_rng(seed).permutation(n)
    n_test = round_half_up(0.2 * n)
    n_val = round_half_up(0.2 * (n - n_test))
    test, val, train = order[:n_test], order[n_test:n_test + n_val], order[n_test + n_val:]
    x, y = table.features, table.labels
    return ClientDataset(table.client_id, x[train], y[train], x[val], y[val], x[test], y[test],
                         tuple(table.class_names))


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class FeatureStats:
    scope: str  # "global" or "local:<client_id>"
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray  # non-missing samples per feature

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def compute_local_stats(x: np.ndarray, client_id: str = "") -> FeatureStats:
    """Per-feature population mean/std over the non-missing entries.

    A feature with no observed value gets mean 0 and std 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise PreprocessError("statistics need a non-empty 2-D split")
    observed = ~np.isnan(x)
    count = observed.sum(axis=0)
    filled = np.where(observed, x, 0.0)
    safe = np.maximum(count, 1)
    mean = filled.sum(axis=0) / safe
    var = (np.where(observed, x - mean, 0.0) ** 2).sum(axis=0) / safe
    empty = count == 0
    if empty.any():
        warnings.warn(f"client {client_id!r}: {int(empty.sum())} feature(s) have no observed values; "
                      "using mean 0, std 1", RuntimeWarning, stacklevel=2)
        mean[empty] = 0.0
        var[empty] = 1.0
    return FeatureStats(f"local:{client_id}", mean, np.sqrt(var), count)


def aggregate_global_stats(stats: Sequence[FeatureStats]) -> FeatureStats:
    """Pool local statistics by the law of total variance.

    Uses ``sum w_i (var_i + (mu_i - mu_g)^2)``, algebraically the same as
    ``sum w_i (var_i + mu_i^2) - mu_g^2`` but without the cancellation.
    """
    if not stats:
        raise PreprocessError("no statistics to aggregate")
    dim = stats[0].dim
    if any(s.dim != dim for s in stats):
        raise PreprocessError("feature dimension mismatch between clients")
    counts = np.stack([s.count for s in stats]).astype(np.float64)
    total = counts.sum(axis=0)
    w = counts / np.maximum(total, 1.0)
    means = np.stack([s.mean for s in stats])
    mean = (w * means).sum(axis=0)
    var = (w * (np.stack([s.std for s in stats]) ** 2 + (means - mean) ** 2)).sum(axis=0)
    empty = total == 0
    mean[empty] = 0.0
    var[empty] = 1.0
    return FeatureStats("global", mean, np.sqrt(var), total.astype(np.int64))


def _scale(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    if x.shape[1] != stats.dim:
        raise PreprocessError(f"split has {x.shape[1]} features, statistics have {stats.dim}")
    std = np.where(stats.std > 0, stats.std, 1.0)
    out = (x - stats.mean) / std
    # imputing the mean before scaling yields exactly zero
    out[np.isnan(out)] = 0.0
    return out


def standardize(ds: ClientDataset, stats: FeatureStats) -> ClientDataset:
    """Scale all three splits with the given statistics and impute missing cells."""
    return replace(ds, x_train=_scale(ds.x_train, stats), x_val=_scale(ds.x_val, stats),
                   x_test=_scale(ds.x_test, stats))


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentationPlan:
    mode: str = "none"
    replication: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_REPLICATION))
    noise_mean: float = 0.0
    noise_std: float = 1e-4

    def __post_init__(self):
        if self.mode not in AUGMENTATION_MODES:
            raise PreprocessError(f"unknown augmentation mode {self.mode!r}")
        if self.noise_std < 0:
            raise PreprocessError("noise_std must be non-negative")
        if any(int(k) < 0 for k in self.replication.values()):
            raise PreprocessError("replication counts must be non-negative")

    def replicas_per_class(self, class_names: Sequence[str]) -> np.ndarray:
        return np.array([int(self.replication.get(c, 0)) for c in class_names], dtype=np.int64)


def _replicate(x, y, per_class, noise_mean, noise_std, seed):
    rng = np.random.default_rng(seed)
    picks = [np.repeat(np.flatnonzero(y == c), k) for c, k in enumerate(per_class) if k > 0]
    if not picks:
        return x.copy(), y.copy()
    idx = np.concatenate(picks)
    if idx.size == 0:
        return x.copy(), y.copy()
    noise = rng.normal(noise_mean, noise_std, size=(idx.size, x.shape[1])) if noise_std > 0 \
        else np.full((idx.size, x.shape[1]), noise_mean)
    return np.concatenate([x, x[idx] + noise]), np.concatenate([y, y[idx]])


def augment_base(x, y, plan: AugmentationPlan, class_names, seed) -> tuple[np.ndarray, np.ndarray]:
    """Give every sample of class c ``replication[c]`` noisy copies.

    Originals come first, then the replicas grouped by class.
    """
    per_class = plan.replicas_per_class(class_names)
    return _replicate(x, y, per_class, plan.noise_mean, plan.noise_std, seed)


def balanced_replicas(counts: np.ndarray) -> np.ndarray:
    """Extra copies per sample: ``floor(m / n_c) - 1`` for present classes, else 0."""
    counts = np.asarray(counts, dtype=np.int64)
    m = counts.max() if counts.size else 0
    out = np.zeros_like(counts)
    present = counts > 0
    out[present] = m // counts[present] - 1
    return out


def augment_balanced(x, y, n_classes: int, noise_mean: float, noise_std: float, seed):
    """Replicate each present class towards the client's most common class."""
    per_class = balanced_replicas(np.bincount(y, minlength=n_classes))
    return _replicate(x, y, per_class, noise_mean, noise_std, seed)


def augment(ds: ClientDataset, plan: AugmentationPlan, seed) -> ClientDataset:
    if plan.mode == "none":
        return ds
    if plan.mode == "base":
        x, y = augment_base(ds.x_train, ds.y_train, plan, ds.class_names, seed)
    else:
        x, y = augment_balanced(ds.x_train, ds.y_train, len(ds.class_names),
                                plan.noise_mean, plan.noise_std, seed)
    return replace(ds, x_train=x, y_train=y)


# ---------------------------------------------------------------- test sets

def build_fair_test_set(clients: Sequence[ClientDataset]) -> TestSet:
    """Concatenate every client's own test split."""
    if not clients:
        raise PreprocessError("no clients")
    return TestSet(np.concatenate([c.x_test for c in clients]),
                   np.concatenate([c.y_test for c in clients]),
                   np.concatenate([np.full(c.y_test.size, c.client_id, dtype=object) for c in clients]))


def choose_holdout(client_ids: Sequence[str], k: int, seed) -> list[str]:
    if not 0 < k < len(client_ids):
        raise PreprocessError(f"holdout count {k} must lie in (0, {len(client_ids)})")
    picked = np.random.default_rng(seed).choice(len(client_ids), size=k, replace=False)
    return sorted(client_ids[i] for i in picked)


def build_holdout_test_set(clients: Sequence[ClientDataset], k: int, seed
                           ) -> tuple[TestSet, list[ClientDataset]]:
    """Move ``k`` randomly chosen clients, with all of their data, into the test set."""
    return _split_holdout(clients, choose_holdout([c.client_id for c in clients], k, seed))


def _split_holdout(clients, held) -> tuple[TestSet, list[ClientDataset]]:
    held = set(held)
    parts = [c.all_data() + (c.client_id,) for c in clients if c.client_id in held]
    test = TestSet(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                   np.concatenate([np.full(p[1].size, p[2], dtype=object) for p in parts]))
    return test, [c for c in clients if c.client_id not in held]


# ---------------------------------------------------------------- pipeline

@dataclass
class PreparedData:
    clients: list[ClientDataset]
    test_set: TestSet
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    stats: dict[str, FeatureStats]
    holdout: list[str] = field(default_factory=list)

    @property
    def total_samples(self) -> int:
        return sum(c.n_samples for c in self.clients)


def _client_seed(seed: int, position: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(purpose), int(position)])


_PARTITION, _AUGMENT, _HOLDOUT = 0, 1, 2


def prepare(tables: Sequence[RawClientTable], scaling: str = "global", plan: AugmentationPlan | None = None,
            test_scheme: str = "fair", holdout_clients: int = 1, seed: int = 0) -> PreparedData:
    """Partition, scale, choose the test set and augment, in that order.

    Statistics come from training splits only.  Under the hold-out scheme
    the held-out clients do not contribute to global statistics; in local
    mode they are scaled with their own training-split statistics.
    Augmentation runs last, on training splits only.
    """
    if scaling not in SCALING_MODES:
        raise PreprocessError(f"unknown scaling {scaling!r}")
    if test_scheme not in TEST_SCHEMES:
        raise PreprocessError(f"unknown test scheme {test_scheme!r}")
    plan = plan or AugmentationPlan()
    tables = sorted(tables, key=lambda t: t.client_id)
    unknown = set(plan.replication) - set(tables[0].class_names)
    if plan.mode == "base" and unknown:
        log.info("replication entries for absent classes ignored: %s", ", ".join(sorted(unknown)))
    parts = [partition_client(t, _client_seed(seed, i, _PARTITION)) for i, t in enumerate(tables)]
    held: list[str] = []
    if test_scheme == "holdout":
        held = choose_holdout([p.client_id for p in parts], holdout_clients,
                              np.random.SeedSequence([int(seed), _HOLDOUT]))
    local = {p.client_id: compute_local_stats(p.x_train, p.client_id) for p in parts}
    stats = dict(local)
    if scaling == "global":
        stats["global"] = aggregate_global_stats([local[p.client_id] for p in parts
                                                  if p.client_id not in held])
    scaled = [standardize(p, stats["global"] if scaling == "global" else local[p.client_id])
              for p in parts]

    if test_scheme == "fair":
        test, train_clients = build_fair_test_set(scaled), scaled
    else:
        test, train_clients = _split_holdout(scaled, held)

    position = {p.client_id: i for i, p in enumerate(parts)}
    augmented = [augment(c, plan, _client_seed(seed, position[c.client_id], _AUGMENT))
                 for c in train_clients]
    return PreparedData(augmented, test, tuple(tables[0].class_names), tuple(tables[0].feature_names),
                        stats, held)
