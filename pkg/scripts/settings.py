import os
import re
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dotenv import load_dotenv

from errors import ConfigError

BASE_DIR = Path(__file__).resolve().parents[1]
ENV_PATH = BASE_DIR / ".env"
CONFIG_PATH = BASE_DIR / "config" / "config.toml"
SCENARIO_DIR = BASE_DIR / "config" / "scenarios"
SWEEP_DIR = BASE_DIR / "config" / "sweeps"
TOML_POSITION = re.compile(r"\(at line (\d+), column (\d+)\)")

DEFAULTS = {
    "max_dim": 16384,
    "dense_limit": 2048,
    "kernel_tol": 1e-8,
    "lanczos_max_iter": 600,
    "jobs": 1,
    "seed": 20240613,
    "results_dir": "data/results",
    "alpha_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "class_m_threshold": 1e6,
    "dimension_cap": 8.0,
    "ltqo_samples": 64,
    "ltqo_tail_ratio": 0.5,
    "ltqo_zero_tol": 1e-9,
    "gap_c_cap": 16.0,
    "beta_start": 0.1,
    "beta_stop": 1.0,
    "beta_step": 0.05,
    "sweep_cap": 256,
    "choi_max_dim": 64,
    "lr_pauli_cap": 64,
    "record_wall_time": False,
}


def load_env():
    load_dotenv(ENV_PATH)


def read_toml(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("file not found", path=path)
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        column = getattr(exc, "colno", None)
        message = getattr(exc, "msg", str(exc))
        found = TOML_POSITION.search(str(exc))
        if line is None and found:
            line, column = int(found.group(1)), int(found.group(2))
            message = TOML_POSITION.sub("", message).strip()
        raise ConfigError(message, path=path, line=line, column=column) from None


def load_config(path=None):
    config = dict(DEFAULTS)
    path = Path(path) if path else CONFIG_PATH
    if path.exists():
        loaded = read_toml(path)
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}", path=path)
        config.update(loaded)
    return config


def resolve_jobs(cli_jobs, config):
    if cli_jobs is not None:
        jobs = cli_jobs
    elif os.getenv("STITCHLAB_JOBS", "").strip():
        try:
            jobs = int(os.getenv("STITCHLAB_JOBS"))
        except ValueError:
            raise ConfigError("STITCHLAB_JOBS must be an integer") from None
    else:
        jobs = config.get("jobs", 1)
    if int(jobs) < 1:
        raise ConfigError("jobs must be at least 1")
    return int(jobs)


def resolve_results_dir(cli_out, config):
    if cli_out:
        return Path(cli_out)
    env_dir = os.getenv("STITCHLAB_RESULTS_DIR", "").strip()
    raw = Path(env_dir or config.get("results_dir", DEFAULTS["results_dir"]))
    return raw if raw.is_absolute() else BASE_DIR / raw
