"""Flat ``key = value`` run configuration combining model and training fields.

A single text file configures a whole run; keys are exactly the field
names of ModelConfig and TrainConfig.  ``seed`` is shared: it seeds both
weight initialization and the shuffling/augmentation streams.  The
environment variable WDFFU_SEED, when set, overrides it.
"""
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .network import ModelConfig

SEED_ENV_VAR = "WDFFU_SEED"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps_adam: float = 1e-8
    epochs: int = 50
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    lr_schedule: str = "constant"
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay <= 0.0:
            raise ConfigError(f"weight_decay must be positive, got {self.weight_decay}")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {self.betas}")
        if self.eps_adam <= 0.0:
            raise ConfigError(f"eps_adam must be positive, got {self.eps_adam}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(
                f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        self.model.validate()


_TRAIN_FLOATS = ("lr", "weight_decay", "eps_adam")
_TRAIN_INTS = ("epochs", "batch_size", "seed")
_TRAIN_BOOLS = ("augment",)
_TRAIN_KEYS = set(_TRAIN_FLOATS) | set(_TRAIN_INTS) | set(_TRAIN_BOOLS) \
    | {"betas", "lr_schedule"}
_MODEL_KEYS = set(ModelConfig().to_dict())


def parse_kv_text(text):
    """Parse ``key = value`` lines; '#' comments and blank lines are skipped."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def _parse_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}") from None


def _parse_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def train_config_from_dict(raw):
    """Build a validated TrainConfig from a flat string mapping."""
    unknown = set(raw) - _TRAIN_KEYS - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model_raw = {k: v for k, v in raw.items() if k in _MODEL_KEYS}
    model = ModelConfig.from_dict(model_raw)

    kwargs = {"model": model}
    for key, value in raw.items():
        if key not in _TRAIN_KEYS:
            continue
        if key in _TRAIN_FLOATS:
            kwargs[key] = _parse_float(key, value)
        elif key in _TRAIN_INTS:
            kwargs[key] = _parse_int(key, value)
        elif key in _TRAIN_BOOLS:
            if value.lower() not in ("true", "false"):
                raise ConfigError(f"{key} must be true or false, got {value!r}")
            kwargs[key] = value.lower() == "true"
        elif key == "betas":
            parts = value.strip("()").split(",")
            if len(parts) != 2:
                raise ConfigError(f"betas needs two comma-separated values, got {value!r}")
            kwargs[key] = tuple(_parse_float("betas", p) for p in parts)
        else:
            kwargs[key] = value
    cfg = TrainConfig(**kwargs)
    if "seed" in raw:
        cfg.model.seed = cfg.seed
    cfg.validate()
    return cfg


def load_train_config(path=None, env=os.environ):
    """Read a config file (or use defaults) and apply the seed override."""
    if path is None:
        cfg = TrainConfig()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        cfg = train_config_from_dict(parse_kv_text(text))
    if SEED_ENV_VAR in env:
        seed = env[SEED_ENV_VAR]
        try:
            cfg.seed = int(seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {seed!r}") from None
        cfg.model.seed = cfg.seed
    cfg.validate()
    return cfg
