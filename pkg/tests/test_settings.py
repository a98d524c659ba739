from pathlib import Path

import pytest

import settings
from errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("STITCHLAB_JOBS", raising=False)
    monkeypatch.delenv("STITCHLAB_RESULTS_DIR", raising=False)


def test_jobs_precedence(monkeypatch):
    config = dict(settings.DEFAULTS, jobs=2)
    assert settings.resolve_jobs(None, config) == 2
    monkeypatch.setenv("STITCHLAB_JOBS", "3")
    assert settings.resolve_jobs(None, config) == 3
    assert settings.resolve_jobs(5, config) == 5


def test_jobs_rejects_bad_values(monkeypatch):
    with pytest.raises(ConfigError, match="at least 1"):
        settings.resolve_jobs(0, settings.DEFAULTS)
    monkeypatch.setenv("STITCHLAB_JOBS", "many")
    with pytest.raises(ConfigError, match="STITCHLAB_JOBS"):
        settings.resolve_jobs(None, settings.DEFAULTS)


def test_load_config_merges_defaults(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("dense_limit = 512\nseed = 7\n")
    config = settings.load_config(path)
    assert config["dense_limit"] == 512
    assert config["seed"] == 7
    assert config["max_dim"] == settings.DEFAULTS["max_dim"]


def test_load_config_missing_file_gives_defaults(tmp_path):
    assert settings.load_config(tmp_path / "absent.toml") == settings.DEFAULTS


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("dense_limit = 512\nturbo = true\n")
    with pytest.raises(ConfigError, match="unknown keys: turbo"):
        settings.load_config(path)


def test_syntax_error_carries_position(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("seed = 1\njobs = \n")
    with pytest.raises(ConfigError) as info:
        settings.read_toml(path)
    assert info.value.line == 2
    assert f"{path}:2" in str(info.value)


def test_results_dir_resolution(monkeypatch, tmp_path):
    config = dict(settings.DEFAULTS)
    assert settings.resolve_results_dir(None, config) == settings.BASE_DIR / "data" / "results"
    monkeypatch.setenv("STITCHLAB_RESULTS_DIR", str(tmp_path / "env"))
    assert settings.resolve_results_dir(None, config) == tmp_path / "env"
    assert settings.resolve_results_dir(str(tmp_path / "cli"), config) == Path(tmp_path / "cli")
