import json

import numpy as np
import pytest

from fedhar.cli import main
from fedhar.config import from_dict, loads
from fedhar.experiment import (
    expand_grid,
    inspect_skew,
    last_k_mean,
    run_experiment,
    run_grid,
    summarize,
)
from fedhar.ingest import generate_synthetic
from fedhar.metrics import MetricsRecord, skew_report
from fedhar.neural import snapshot
from fedhar.preprocess import AugmentationPlan, prepare

SMALL = """
mode = "{mode}"
[data]
augmentation = "base"
[data.synthetic]
client_count = 4
class_count = 4
feature_dim = 8
samples_per_client = [80, 60, 50, 40]
class_shares = [0.4, 0.3, 0.2, 0.1]
class_names = ["sitting", "walking", "standing", "running"]
feature_shift = 0.5
seed = 3
[model]
hidden = [16, 8]
batch_size = 16
[federation]
max_rounds = 3
max_virtual_duration = 40.0
eval_period = 10.0
[simulation]
seconds_per_sample = 0.02
"""


@pytest.fixture
def config_file(tmp_path):
    def make(mode="async", extra=""):
        path = tmp_path / f"{mode}.toml"
        path.write_text(SMALL.format(mode=mode) + extra)
        return path
    return make


def test_run_writes_artifacts(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config_file()), "--out", str(out)]) == 0
    assert "async run finished" in capsys.readouterr().out
    names = {p.name for p in out.iterdir()}
    assert {"metrics.csv", "clients.csv", "final_params.bin", "events.tsv", "config.toml",
            "manifest.json"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == {"data": 0, "model": 0, "selection": 0, "latency": 0}
    assert manifest["versions"]["kernel_backend"] in ("python", "cython")
    assert len(manifest["config_hash"]) == 64
    assert set(manifest["files"]) == names - {"manifest.json"}
    sizes, params = snapshot.load(out / "final_params.bin")
    assert sizes == (8, 16, 8, 4) and np.all(np.isfinite(params))
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header.endswith("f1_sitting,f1_walking,f1_standing,f1_running")
    # the written config reproduces the run's configuration
    assert loads((out / "config.toml").read_text()) == loads(config_file().read_text())


def test_seed_flag_sets_every_seed(config_file, tmp_path):
    out = tmp_path / "seeded"
    assert main(["run", "--config", str(config_file("sync")), "--seed", "7", "--out", str(out)]) == 0
    seeds = json.loads((out / "manifest.json").read_text())["seeds"]
    assert set(seeds.values()) == {7}


@pytest.mark.parametrize("mode", ["central", "sync", "async"])
def test_reruns_are_byte_identical(config_file, tmp_path, mode):
    cfg = config_file(mode)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == 0
    for name in ("metrics.csv", "events.tsv", "clients.csv", "final_params.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_exit_codes(config_file, tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nbatch_size = 0\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "model.batch_size" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.toml")]) == 2
    assert main(["bogus"]) == 2
    assert main(["run"]) == 2
    missing_data = tmp_path / "dir.toml"
    missing_data.write_text(f'[data]\nsource = "directory"\ndirectory = "{tmp_path / "nowhere"}"\n')
    assert main(["run", "--config", str(missing_data), "--out", str(tmp_path / "x")]) == 1


def test_grid_command(config_file, tmp_path, capsys):
    grid = tmp_path / "grid.toml"
    grid.write_text("[grid]\n\"model.batch_size\" = [8, 16]\n\"model.learning_rate\" = [0.01, 0.001]\n")
    out = tmp_path / "grid"
    assert main(["grid", "--config", str(config_file("sync")), "--grid", str(grid), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "m-F1" in text and "F1-R" in text
    rows = (out / "summary.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == [f"cell_{i:03d}" for i in range(4)]


def test_grid_rejects_invalid_cells_before_running(config_file, tmp_path):
    grid = tmp_path / "grid.toml"
    grid.write_text("[grid]\n\"model.batch_size\" = [16, 0]\n")
    out = tmp_path / "grid"
    assert main(["grid", "--config", str(config_file()), "--grid", str(grid), "--out", str(out)]) == 2
    assert not out.exists()


def test_one_cell_grid_matches_the_run(config_file):
    cfg = loads(config_file("sync").read_text())
    (row,) = run_grid({"model.batch_size": [16]}, cfg)
    assert row.scores == summarize(run_experiment(cfg))


def test_expand_grid_order():
    cells = expand_grid({"a": [1, 2], "b": ["x", "y"]})
    assert cells == [{"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 2, "b": "x"}, {"a": 2, "b": "y"}]
    assert expand_grid({}) == [{}]
    with pytest.raises(ValueError):
        expand_grid({"a": []})


def test_last_five_average_by_hand():
    values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
    recs = [MetricsRecord(float(i), i, 0.0, "central", "test", 1.0, v, v / 2, (0.0, v))
            for i, v in enumerate(values)]
    recs.insert(3, MetricsRecord(3.5, 3, 0.0, "distributed", "validation", 1.0, 9.0, 9.0, (9.0, 9.0)))
    s = last_k_mean(recs, 1, 5)
    assert s["BA"] == pytest.approx((0.3 + 0.4 + 0.5 + 0.6 + 0.7) / 5)
    assert s["m-F1"] == pytest.approx(0.25)
    assert s["F1-R"] == pytest.approx(0.5)


def test_async_target_merges(config_file):
    cfg = loads(config_file().read_text()).with_overrides(
        {"federation.target_avg_updates": 5.0, "federation.max_virtual_duration": 1e6})
    result = run_experiment(cfg)
    assert result.trace.merges >= 20


# ---------------------------------------------------------------- skew inspection

def _skew_cfg(scaling):
    return from_dict({
        "mode": "central",
        "data": {"scaling": scaling, "augmentation": "base",
                 "synthetic": {"client_count": 2, "class_count": 2, "feature_dim": 4, "group_size": 2,
                               "samples_per_client": 2000, "label_proportions": [[0.5, 0.5], [0.5, 0.5]],
                               "class_means": [[0.0] * 4, [0.0] * 4], "class_names": ["sitting", "running"],
                               "noise_std": 1.0, "seed": 0}},
    })


def test_inspect_skew_separates_shifted_clients_only_under_global_scaling():
    # inject a known per-client shift of 2 noise standard deviations
    raw = generate_synthetic(_skew_cfg("global").data.synthetic)
    raw[1].features[:, :] += 2.0

    def separation(scaling):
        data = prepare(raw, scaling, AugmentationPlan("none"), seed=0)
        rep = skew_report(data.clients, 1, [0], data.feature_names, data.class_names)
        med = rep.medians(data.feature_names[0])
        return abs(med["client1"] - med["client0"])

    # pooled variance is 1 + 1^2 (noise plus half-gap squared), so the gap scales to 2 / sqrt(2)
    assert separation("global") == pytest.approx(2 / np.sqrt(2), abs=0.15)
    assert separation("local") == pytest.approx(0.0, abs=0.15)


def test_inspect_skew_command(tmp_path, capsys):
    cfg = tmp_path / "skew.toml"
    cfg.write_text(SMALL.format(mode="central"))
    assert main(["inspect-skew", "--config", str(cfg), "--class", "running", "--sensor", "syn0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("client_id\tfeature")
    assert len(lines) > 1
    assert main(["inspect-skew", "--config", str(cfg), "--class", "flying", "--sensor", "syn0"]) == 2
    assert main(["inspect-skew", "--config", str(cfg), "--class", "running", "--sensor", "gps"]) == 2


def test_inspect_skew_ignores_augmentation():
    report = inspect_skew(_skew_cfg("global"), "running", "syn")
    # 2000 rows per client at a 50% share: 1000 running samples, no replicas
    assert {e.n for e in report.entries} == {1000}
