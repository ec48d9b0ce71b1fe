"""Run configuration resolution for the dcim command.

Each value is resolved from, highest precedence first: the command-line
flag, the ``DCIM_<FLAG>`` environment variable, the YAML run-config file,
and the bundled default in the package data/ directory.
"""

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigurationError

ENV_PREFIX = "DCIM_"

_INT_FIELDS = {"horizon", "trajectories", "runs", "seed", "workers", "cap", "family_cap", "state_cap", "sample_family",
               "jsr_depth", "nodes", "model_seed"}
_FLOAT_FIELDS = {"tol"}
_BOOL_FIELDS = {"best_policy", "optimum", "bruteforce_check", "dynamic"}

_CHOICES = {
    "format": ("csv", "json", "msgpack"),
    "estimator": ("prob", "indicator"),
    "mode": ("greedy", "bruteforce"),
    "x_convention": ("column-sum", "row-sum"),
    "kind": ("gnp", "regular"),
}


@dataclass(frozen=True)
class RunConfig:
    """Every value a dcim subcommand depends on; serialized into manifest.json."""

    model: Optional[str] = None
    policy: Optional[str] = None
    policies: str = "P1,P2,P3,P4,P5"
    policy_file: Optional[str] = None
    best_policy: bool = False
    optimum: bool = False
    bruteforce_check: bool = False
    mode: str = "greedy"
    state: Optional[str] = None
    target: str = "N"
    horizon: int = 1000
    trajectories: int = 1
    runs: int = 1000
    seed: Optional[int] = None
    workers: Optional[int] = None
    out: str = "dcim-out"
    format: str = "csv"
    estimator: str = "prob"
    x_convention: Optional[str] = None
    cap: int = 20
    family_cap: int = 4096
    state_cap: int = 3 ** 10
    sample_family: Optional[int] = None
    jsr_depth: int = 4
    tol: float = 1e-3
    kind: str = "gnp"
    nodes: int = 30
    params: str = "0.05,0.1,0.2"
    model_seed: int = 0
    dynamic: bool = False
    log_level: str = "WARNING"

    def to_json(self) -> dict:
        return asdict(self)

    def with_seed(self) -> "RunConfig":
        """Fill in a fresh seed if none was given, so it lands in the manifest."""
        if self.seed is not None:
            return self
        return replace(self, seed=int(np.random.SeedSequence().entropy % (2 ** 63)))

    def validate(self) -> "RunConfig":
        for name in ("horizon", "trajectories", "runs", "cap", "family_cap", "state_cap", "jsr_depth", "nodes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.sample_family is not None and self.sample_family < 1:
            raise ConfigurationError(f"sample_family must be >= 1, got {self.sample_family}")
        if self.seed is not None and self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        for name, choices in _CHOICES.items():
            value = getattr(self, name)
            if value is not None and value not in choices:
                raise ConfigurationError(f"{name} must be one of {choices}, got {value!r}")
        return self


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def get_default_config():
    """Return the path to the bundled default run configuration."""
    package_dir = os.path.dirname(os.path.abspath(__file__))
    return os.path.join(package_dir, "data", "dcim_default.yaml")


def find_config(explicit=None, environ=None):
    """Find the run-configuration file.

    Search order:
    1. ``explicit`` (the --config flag); it must exist
    2. DCIM_CONF environment variable
    3. ~/.dcim/dcim.yaml
    4. Bundled default in the package data/ directory

    Returns:
        str: Path to the configuration file, or None if not found.
    """
    if explicit:
        if not os.path.isfile(explicit):
            raise ConfigurationError(f"config file not found: {explicit}")
        return explicit

    environ = os.environ if environ is None else environ
    env_conf = environ.get(ENV_PREFIX + "CONF")
    if env_conf and os.path.isfile(env_conf):
        return env_conf

    user_conf = os.path.expanduser("~/.dcim/dcim.yaml")
    if os.path.isfile(user_conf):
        return user_conf

    default_conf = get_default_config()
    if os.path.isfile(default_conf):
        return default_conf
    return None


def _coerce(name: str, value, where: str):
    if value is None:
        return None
    try:
        if name in _BOOL_FIELDS:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if name in _INT_FIELDS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if name in _FLOAT_FIELDS:
            return float(value)
    except (TypeError, ValueError):
        kind = "boolean" if name in _BOOL_FIELDS else "integer" if name in _INT_FIELDS else "number"
        raise ConfigurationError(f"{where}: expected a {kind}, got {value!r}") from None
    return str(value)


def load_config_file(path) -> dict:
    """Parse a YAML run-config; keys may use dashes or underscores."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a mapping of settings")
    out = {}
    for key, value in doc.items():
        name = str(key).replace("-", "_")
        if name not in FIELD_NAMES:
            raise ConfigurationError(f"{path}: unknown setting {key!r}")
        out[name] = _coerce(name, value, f"{path}: {key}")
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name in FIELD_NAMES:
        var = ENV_PREFIX + name.upper()
        if var in environ and environ[var] != "":
            out[name] = _coerce(name, environ[var], var)
    return out


def resolve_config(cli: dict, config_path=None, environ=None) -> RunConfig:
    """Merge bundled defaults, the config file, the environment and CLI flags."""
    values = {}
    default = get_default_config()
    if os.path.isfile(default):
        values.update(load_config_file(default))
    found = find_config(config_path, environ)
    if found and os.path.abspath(found) != os.path.abspath(default):
        values.update(load_config_file(found))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in cli.items() if k in FIELD_NAMES and v is not None})
    return RunConfig(**values).validate()
