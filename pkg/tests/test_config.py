import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhar.config import ConfigError, ExperimentConfig, config_hash, dumps, from_dict, loads


def test_empty_config_takes_defaults():
    cfg = loads("")
    assert cfg.federation.local_epochs == 2
    assert cfg.model.momentum == 0.9
    assert cfg.federation.mixing_ratio == 0.8
    assert cfg.federation.eval_period == 20.0
    assert cfg.federation.rule_form == "convex"
    assert cfg.data.source == "synthetic"


@pytest.mark.parametrize("text,field", [
    ("[model]\nbatch_size = 0", "model.batch_size"),
    ("[model]\nmax_rounds = 3", "model.max_rounds"),
    ("mode = \"p2p\"", "mode"),
    ("[federation]\nmixing_ratio = 1.5", "federation.mixing_ratio"),
    ("[model]\nlearning_rate = 0", "model.learning_rate"),
    ("[model]\nbatch_size = \"big\"", "model.batch_size"),
    ("[data.synthetic]\nclusters = 3", "data.synthetic.clusters"),
    ("[data]\nsource = \"directory\"", "data.directory"),
    ("[federation]\neval_period = -1.0", "federation.eval_period"),
    ("[data.replication]\nrunning = -2", "data.replication.running"),
])
def test_validation_names_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert info.value.field == field


def test_invalid_toml():
    with pytest.raises(ConfigError, match="invalid TOML"):
        loads("[model\nbatch_size = 1")


def test_round_trip_of_defaults_and_nested_values():
    cfg = loads("""
mode = "sync"
[data]
augmentation = "balanced"
[data.synthetic]
samples_per_client = [10, 20, 30]
client_count = 3
class_means = [[0.0, 1.0], [1.0, 0.0]]
class_count = 2
feature_dim = 2
[model]
hidden = [32, 8]
persist_optimizer_state = true
[federation]
clients_per_round = 2
""")
    again = loads(dumps(cfg))
    assert again == cfg
    assert again.data.synthetic.class_means == ((0.0, 1.0), (1.0, 0.0))


@settings(max_examples=40, deadline=None)
@given(bs=st.integers(1, 512), lr=st.floats(1e-5, 1.0), mode=st.sampled_from(["central", "sync", "async"]),
       opt=st.sampled_from(["sgdm", "adam"]), seed=st.integers(0, 2**31))
def test_round_trip_property(bs, lr, mode, opt, seed):
    cfg = from_dict({"mode": mode, "model": {"batch_size": bs, "learning_rate": lr, "optimizer": opt}})
    cfg = cfg.with_seed(seed)
    assert loads(dumps(cfg)) == cfg


def test_overrides():
    cfg = ExperimentConfig().with_overrides({"model.batch_size": 32, "data.synthetic.seed": 4})
    assert cfg.model.batch_size == 32 and cfg.data.synthetic.seed == 4
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides({"model.nope": 1})


def test_config_hash_tracks_meaningful_fields():
    base = ExperimentConfig()
    assert config_hash(base) == config_hash(base.with_overrides({"output_dir": "elsewhere"}))
    assert config_hash(base) == config_hash(base.with_overrides({"simulation.write_events": False}))
    for key, value in [("model.batch_size", 64), ("seeds.latency", 1), ("data.synthetic.seed", 9),
                       ("simulation.pre_merge_delay", 1.0)]:
        assert config_hash(base) != config_hash(base.with_overrides({key: value}))


def test_persist_state_resolution():
    cfg = ExperimentConfig()
    assert cfg.model.persist_state("central") is True
    assert cfg.model.persist_state("async") is False
    forced = cfg.with_overrides({"model.persist_optimizer_state": True})
    assert forced.model.persist_state("sync") is True
