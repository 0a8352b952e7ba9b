# test_config.py
import os

import pytest

from config import ConfigError, NmfConfig, PipelineConfig, QueryConfig, apply_overrides, load_config


def test_defaults():
    config = PipelineConfig()
    assert (config.query.base_sim, config.query.max_sim, config.query.overflow_count) == (0.4, 0.6, 1000)
    assert config.query.step == 0.05
    assert config.query.mode == "combined"
    nmf = config.nmf
    assert (nmf.alpha, nmf.l1_ratio, nmf.tol) == (0.1, 0.5, 1e-4)
    assert (nmf.max_features, nmf.max_df, nmf.membership_threshold) == (10000, 0.9, 0.1)
    assert (nmf.n_keywords, nmf.top_comments, nmf.max_iter) == (10, 10, 500)
    assert nmf.drop_multi_org
    assert config.distance.fraction == 0.10
    assert config.distance.chunk_limit == 512
    assert config.distance.reference == "average"
    assert config.engine == "nmf"


def test_validation_rejects_bad_values():
    with pytest.raises(ValueError):
        NmfConfig(n_topics=1)
    with pytest.raises(ValueError):
        NmfConfig(l1_ratio=1.5)
    with pytest.raises(ValueError):
        QueryConfig(base_sim=0.7, max_sim=0.6)


def test_apply_overrides_parses_toml_scalars():
    data = apply_overrides({}, ["nmf.n_topics=12", "distance.parties=[\"A\", \"B\"]", "output_dir=runs/x"])
    assert data == {"nmf": {"n_topics": 12}, "distance": {"parties": ["A", "B"]}, "output_dir": "runs/x"}


def test_override_without_equals_is_a_config_error():
    with pytest.raises(ConfigError):
        load_config(None, ["nmf.n_topics"])


def test_invalid_override_value_is_a_config_error():
    with pytest.raises(ConfigError):
        load_config(None, ["nmf.n_topics=1"])


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("does/not/exist.toml")


def test_invalid_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[nmf\nn_topics = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_file_paths_resolve_relative_to_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        '[paths]\nnotes = ["notes/a.txt"]\nissues = "issues.csv"\n'
        '[nmf]\nn_topics = 7\n'
        '[run]\noutput_dir = "out"\n',
        encoding="utf-8",
    )
    config = load_config(str(path))
    assert config.paths.notes == [os.path.join(str(tmp_path), "notes", "a.txt")]
    assert config.paths.issues == os.path.join(str(tmp_path), "issues.csv")
    assert config.nmf.n_topics == 7
    assert config.output_dir == "out"


def test_overrides_win_over_run_table(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[run]\noutput_dir = "from-file"\n', encoding="utf-8")
    assert load_config(str(path), ["output_dir=from-cli"]).output_dir == "from-cli"
    assert load_config(str(path), ["run.output_dir=nested"]).output_dir == "nested"
