"""Training configuration and ``key=value`` config files."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..data import SyntheticTaskConfig
from ..errors import InvalidArgument
from ..model import ModelConfig


@dataclass
class TrainConfig:
    alpha: float = 0.3
    lam: float = 0.0
    epochs: int = 100
    batch_size: int = 8
    peak_lr: float = 5e-3
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    seed: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise InvalidArgument(f"lambda must be nonnegative, got {self.lam}")
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_steps < 1:
            raise InvalidArgument("epochs >= 0, batch_size >= 1 and warmup_steps >= 1 required")
        if self.peak_lr <= 0:
            raise InvalidArgument("peak_lr must be positive")

    def learning_rate(self, step: int) -> float:
        """Linear warmup to ``peak_lr`` then inverse-square-root decay (step counts from 1)."""
        step = max(step, 1)
        return self.peak_lr * min(step / self.warmup_steps, (self.warmup_steps / step) ** 0.5)


# config-file keys that differ from dataclass field names
_ALIASES = {"lambda": "lam"}


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{path}:{n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[_ALIASES.get(k.strip(), k.strip())] = v.strip()
    return out


def _coerce(value: str, kind):
    kind = str(kind)
    if "bool" in kind:
        return value.lower() in ("1", "true", "yes", "on")
    if "int" in kind:
        return int(value)
    if "float" in kind:
        return float(value)
    if value.lower() in ("", "none"):
        return None
    return value


def build(cls, values: dict, **overrides):
    """Instantiate ``cls`` from the subset of ``values`` naming its fields."""
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            kwargs[f.name] = _coerce(str(values[f.name]), f.type)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def known_keys() -> set[str]:
    keys = set(_ALIASES) | {"posterior_threshold"}
    for cls in (TrainConfig, ModelConfig, SyntheticTaskConfig):
        keys.update(f.name for f in fields(cls))
    return keys


def check_keys(values: dict) -> None:
    unknown = sorted(set(values) - known_keys())
    if unknown:
        raise InvalidArgument(f"unknown config keys: {', '.join(unknown)}")
