import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhar.ingest import RawClientTable, SyntheticConfig, generate_synthetic
from fedhar.preprocess import (
    AugmentationPlan,
    ClientDataset,
    FeatureStats,
    PreprocessError,
    aggregate_global_stats,
    augment_balanced,
    augment_base,
    balanced_replicas,
    build_fair_test_set,
    build_holdout_test_set,
    compute_local_stats,
    partition_client,
    prepare,
    round_half_up,
    standardize,
)

NAMES = ("sitting", "walking", "running")


def table(n, d=2, cid="c", labels=None, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3 if labels is None else np.asarray(labels)
    return RawClientTable(cid, np.arange(n, dtype=float), rng.normal(size=(n, d)), y,
                          tuple(f"g:f{j}" for j in range(d)), NAMES)


def dataset(x, y, cid="c"):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    return ClientDataset(cid, x, y, x[:1], y[:1], x[:1], y[:1], NAMES)


# ---------------------------------------------------------------- partition

def test_round_half_up():
    assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]


@pytest.mark.parametrize("n,sizes", [(100, (64, 16, 20)), (10, (6, 2, 2)), (5, (3, 1, 1))])
def test_partition_sizes(n, sizes):
    ds = partition_client(table(n), 0)
    assert (ds.y_train.size, ds.y_val.size, ds.y_test.size) == sizes


def test_partition_is_disjoint_and_deterministic():
    t = table(57)
    t.features[:, 0] = np.arange(57)  # row identity
    a, b = partition_client(t, 4), partition_client(t, 4)
    ids = [set(s[:, 0]) for s in (a.x_train, a.x_val, a.x_test)]
    assert set.union(*ids) == set(range(57))
    assert sum(len(s) for s in ids) == 57
    assert np.array_equal(a.x_test, b.x_test)
    assert not np.array_equal(a.x_test, partition_client(t, 5).x_test)


def test_partition_rejects_tiny_tables():
    with pytest.raises(PreprocessError):
        partition_client(table(4), 0)


# ---------------------------------------------------------------- statistics

def test_local_stats_examples():
    s = compute_local_stats(np.array([[0.0, 5.0], [2.0, 5.0]]))
    assert list(s.mean) == [1.0, 5.0] and list(s.std) == [1.0, 0.0]
    s = compute_local_stats(np.array([[1.0, np.nan], [3.0, 4.0], [np.nan, 8.0]]))
    assert list(s.mean) == [2.0, 6.0] and list(s.count) == [2, 2]


def test_all_missing_feature_warns_and_defaults():
    with pytest.warns(RuntimeWarning, match="no observed"):
        s = compute_local_stats(np.array([[np.nan, 1.0], [np.nan, 3.0]]), "c7")
    assert s.mean[0] == 0.0 and s.std[0] == 1.0


def test_global_stats_hand_example():
    g = aggregate_global_stats([compute_local_stats(np.array([[0.0], [2.0]])),
                                compute_local_stats(np.array([[4.0]]))])
    assert g.mean[0] == pytest.approx(2.0)
    assert g.std[0] == pytest.approx(math.sqrt(8 / 3), rel=1e-12)
    assert g.count[0] == 3


def test_global_stats_identity_and_symmetry():
    x = np.random.default_rng(0).normal(size=(20, 3))
    s = compute_local_stats(x)
    for g in (aggregate_global_stats([s]), aggregate_global_stats([s, s])):
        assert np.allclose(g.mean, s.mean, rtol=1e-14) and np.allclose(g.std, s.std, rtol=1e-14)


def test_global_stats_dimension_mismatch():
    with pytest.raises(PreprocessError):
        aggregate_global_stats([compute_local_stats(np.ones((2, 2))), compute_local_stats(np.ones((2, 3)))])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), parts=st.integers(1, 8), offset=st.floats(-1e4, 1e4))
def test_pooled_stats_match_concatenation(seed, parts, offset):
    rng = np.random.default_rng(seed)
    x = rng.normal(offset, rng.uniform(0.1, 10), size=(rng.integers(parts, 200), 4))
    x[rng.random(x.shape) < 0.1] = np.nan
    x[0] = 1.0  # every feature observed at least once
    cuts = np.sort(rng.choice(np.arange(1, len(x)), size=parts - 1, replace=False)) if parts > 1 else []
    pieces = np.split(x, cuts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        g = aggregate_global_stats([compute_local_stats(p) for p in pieces])
    assert np.allclose(g.mean, np.nanmean(x, axis=0), rtol=1e-9, atol=1e-12)
    assert np.allclose(g.std, np.nanstd(x, axis=0), rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- standardize

def test_standardize_examples():
    stats = FeatureStats("global", np.array([2.0, 1.0]), np.array([2.0, 0.0]), np.array([1, 1]))
    ds = dataset([[4.0, 3.0], [np.nan, np.nan]], [0, 1])
    out = standardize(ds, stats)
    assert out.x_train.tolist() == [[1.0, 2.0], [0.0, 0.0]]


def test_standardize_with_own_stats():
    x = np.random.default_rng(1).normal(5, 3, size=(50, 4))
    out = standardize(dataset(x, np.zeros(50, dtype=int)), compute_local_stats(x))
    assert np.all(np.abs(out.x_train.mean(axis=0)) < 1e-9)
    assert np.allclose(out.x_train.std(axis=0), 1.0, atol=1e-9)


def test_standardize_dimension_mismatch():
    stats = compute_local_stats(np.ones((2, 3)))
    with pytest.raises(PreprocessError):
        standardize(dataset(np.ones((2, 2)), [0, 0]), stats)


# ---------------------------------------------------------------- augmentation

def test_base_augmentation_counts_and_noise():
    y = np.array([0] * 100 + [2] * 5)
    x = np.random.default_rng(0).normal(size=(105, 3))
    plan = AugmentationPlan("base", {"running": 20, "bicycling": 8})
    xa, ya = augment_base(x, y, plan, NAMES, 0)
    assert list(np.bincount(ya, minlength=3)) == [100, 0, 105]
    assert np.array_equal(xa[:105], x)
    diff = xa[105:] - np.repeat(x[100:], 20, axis=0)
    assert 0 < np.abs(diff).max() < 1e-3


def test_base_augmentation_identity_and_exact_copies():
    y = np.array([0, 1, 2, 2])
    x = np.arange(12, dtype=float).reshape(4, 3)
    xa, ya = augment_base(x, y, AugmentationPlan("base", {}), NAMES, 0)
    assert np.array_equal(xa, x) and np.array_equal(ya, y)
    xa, ya = augment_base(x, y, AugmentationPlan("base", {"running": 2}, noise_std=0.0), NAMES, 0)
    assert np.array_equal(xa[4:], x[[2, 2, 3, 3]])


@settings(max_examples=100, deadline=None)
@given(counts=st.lists(st.integers(0, 40), min_size=3, max_size=3),
       reps=st.lists(st.integers(0, 25), min_size=3, max_size=3))
def test_base_count_formula(counts, reps):
    y = np.repeat(np.arange(3), counts)
    x = np.zeros((y.size, 2))
    plan = AugmentationPlan("base", dict(zip(NAMES, reps)))
    _, ya = augment_base(x, y, plan, NAMES, 0)
    assert list(np.bincount(ya, minlength=3)) == [n * (1 + k) for n, k in zip(counts, reps)]


@settings(max_examples=100, deadline=None)
@given(counts=st.lists(st.integers(0, 300), min_size=2, max_size=6).filter(lambda c: max(c) > 0))
def test_balanced_count_formula(counts):
    y = np.repeat(np.arange(len(counts)), counts)
    _, ya = augment_balanced(np.zeros((y.size, 1)), y, len(counts), 0.0, 1e-4, 0)
    m = max(counts)
    got = np.bincount(ya, minlength=len(counts))
    for n, g in zip(counts, got):
        assert g == (n * (m // n) if n else 0)
        assert g <= m


def test_balanced_examples():
    assert list(balanced_replicas(np.array([3000, 100]))) == [0, 29]
    assert list(balanced_replicas(np.array([7, 3, 0]))) == [0, 1, 0]
    assert list(balanced_replicas(np.array([5, 5]))) == [0, 0]


def test_plan_validation():
    with pytest.raises(PreprocessError):
        AugmentationPlan("smote")
    with pytest.raises(PreprocessError):
        AugmentationPlan("base", {"running": -1})


# ---------------------------------------------------------------- test sets

def test_fair_test_set():
    clients = [partition_client(table(n, cid=f"c{i}", seed=i), i) for i, n in enumerate((50, 100, 150))]
    ts = build_fair_test_set(clients)
    assert len(ts) == 10 + 20 + 30
    assert set(ts.source) == {"c0", "c1", "c2"}
    assert set(ts.y) == {0, 1, 2}


def test_holdout_test_set():
    clients = [partition_client(table(50, cid=f"c{i}", seed=i), i) for i in range(3)]
    ts, rest = build_holdout_test_set(clients, 1, 9)
    assert len(rest) == 2 and len(ts) == 50
    again, _ = build_holdout_test_set(clients, 1, 9)
    assert np.array_equal(ts.source, again.source)
    with pytest.raises(PreprocessError):
        build_holdout_test_set(clients, 3, 0)


def test_holdout_can_remove_a_class_from_training():
    tables = [table(30, cid="a", labels=[0, 1] * 15), table(30, cid="b", labels=[0, 1] * 15),
              table(30, cid="r", labels=[2] * 30)]
    for seed in range(50):
        data = prepare(tables, "global", AugmentationPlan("none"), "holdout", 1, seed)
        if data.holdout == ["r"]:
            break
    else:
        pytest.fail("seed search never held out the running client")
    assert 2 in data.test_set.y
    assert all(2 not in c.y_train for c in data.clients)
    # held-out clients do not contribute to global statistics
    assert data.stats["global"].count[0] == sum(data.stats[c].count[0] for c in ("a", "b"))


# ---------------------------------------------------------------- pipeline

def test_prepare_augments_only_training_splits():
    tables = generate_synthetic(SyntheticConfig(client_count=3, class_count=3, samples_per_client=60,
                                                class_names=NAMES, seed=2))
    plain = prepare(tables, "global", AugmentationPlan("none"), seed=1)
    aug = prepare(tables, "global", AugmentationPlan("base", {"running": 3}), seed=1)
    for p, a in zip(plain.clients, aug.clients):
        assert np.array_equal(p.x_test, a.x_test) and np.array_equal(p.x_val, a.x_val)
        n_run = int((p.y_train == 2).sum())
        assert a.n_samples == p.n_samples + 3 * n_run
    assert np.array_equal(plain.test_set.x, aug.test_set.x)


def test_prepare_local_scaling_uses_own_statistics():
    tables = generate_synthetic(SyntheticConfig(client_count=3, feature_shift=5.0, seed=0))
    data = prepare(tables, "local", AugmentationPlan("none"), seed=0)
    for c in data.clients:
        assert np.all(np.abs(c.x_train.mean(axis=0)) < 1e-9)
    glob = prepare(tables, "global", AugmentationPlan("none"), seed=0)
    pooled = np.concatenate([c.x_train for c in glob.clients])
    assert np.all(np.abs(pooled.mean(axis=0)) < 1e-9)
    assert np.allclose(pooled.std(axis=0), 1.0, atol=1e-9)
