import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.config import CONFIG_VERSION, ExperimentConfig
from driftlab.exceptions import ConfigError


def test_defaults_validate_and_match_trainer_defaults():
    cfg = ExperimentConfig.default()
    t = cfg.train_config()
    assert (t.stage1_iters, t.stage2_iters, t.batch_size, t.lr) == (400, 100, 16, 1e-3)
    assert cfg.rollout_config().chunks == 8 and cfg.sampler_config().steps == 20


def test_serialization_is_canonical_and_idempotent(tmp_path):
    cfg = ExperimentConfig.default(trend=True)
    path = tmp_path / "c.yaml"
    cfg.save(path)
    again = ExperimentConfig.load(path)
    assert again.dumps() == cfg.dumps()
    assert again.hash == cfg.hash


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), gamma=st.floats(0.5, 1.0), N=st.integers(1, 12),
       lr=st.floats(1e-5, 1e-1))
def test_round_trip_property(seed, gamma, N, lr):
    cfg = ExperimentConfig.default(seed=seed, codec={"gamma": gamma}, rollout={"N": N}, train={"lr": lr})
    text = cfg.dumps()
    parsed = ExperimentConfig.from_dict(yaml.safe_load(text))
    assert parsed.dumps() == text
    assert parsed.hash == cfg.hash


def test_hash_tracks_content():
    a = ExperimentConfig.default()
    assert a.hash == ExperimentConfig.default().hash
    assert a.hash != a.with_seed(1).hash
    assert a.hash != a.replace(codec={"gamma": 0.9}).hash


def test_module_seeds_are_distinct_and_follow_master():
    a, b = ExperimentConfig.default().seeds(), ExperimentConfig.default(seed=1).seeds()
    assert len(set(a.values())) == len(a)
    assert all(a[k] != b[k] for k in a)
    assert ExperimentConfig.default().seeds() == a


def test_scientific_notation_strings_are_numbers(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(f"version: {CONFIG_VERSION}\ntrain:\n  lr: 1e-3\n")
    assert ExperimentConfig.load(path).train_config().lr == 1e-3


@pytest.mark.parametrize("doc", [
    {},
    {"version": 99},
    {"version": CONFIG_VERSION, "colour": 1},
    {"version": CONFIG_VERSION, "memory": {"T_z": 5}},
    {"version": CONFIG_VERSION, "memory": {"m": 5}},
    {"version": CONFIG_VERSION, "rollout": {"mode": "teleport"}},
    {"version": CONFIG_VERSION, "codec": {"gamma": 1.5}},
    {"version": CONFIG_VERSION, "train": {"lr": -1.0}},
    {"version": CONFIG_VERSION, "train": {"lr": "fast"}},
    {"version": CONFIG_VERSION, "train": {"beta": 0.0}},
    {"version": CONFIG_VERSION, "train": {"perturb_kind": "blur"}},
    {"version": CONFIG_VERSION, "seed": -1},
    {"version": CONFIG_VERSION, "world": 3},
])
def test_invalid_documents_raise(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: [1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)
