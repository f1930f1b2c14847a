from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .sessions import ConfigError

TASKS = ("task1", "task2")


@dataclass
class ModelConfig:
    d: int = 128
    K: int = 1
    M: int = 8
    beta: float = 0.1
    gamma: float = 10.0
    # per-behavior weights on the positive term of the behavior loss; None picks by behavior count
    lam: tuple[float, ...] | None = None
    batch_size: int = 512
    lr: float = 0.001
    lr_decay: float = 0.1
    lr_decay_step: int = 3
    epochs: int = 10
    seed: int = 0
    task: str = "task2"
    neighbor_cap: int = 12
    init_std: float = 0.1
    eval_k: int = 20
    item_loss: str = "literal"  # or "categorical"
    weight_transform: str = "log1p"  # or "raw"
    normalize_attention: bool = True
    tie_attention: bool = False
    use_general: bool = True
    use_current: bool = True

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.d < 1 or self.M < 1 or self.K < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("d, M, batch_size must be positive; K, epochs non-negative")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.lam is not None:
            self.lam = tuple(float(x) for x in self.lam)
            if any(x < 0 for x in self.lam):
                raise ConfigError("lambda entries must be >= 0")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.item_loss not in ("literal", "categorical"):
            raise ConfigError(f"unknown item_loss {self.item_loss!r}")
        if self.weight_transform not in ("log1p", "raw"):
            raise ConfigError(f"unknown weight_transform {self.weight_transform!r}")
        if self.lr_decay_step < 1:
            raise ConfigError("lr_decay_step must be >= 1")
        if self.neighbor_cap < 0:
            raise ConfigError("neighbor_cap must be >= 0")

    def behavior_weights(self, n_behaviors: int) -> tuple[float, ...]:
        if self.lam is not None:
            if len(self.lam) != n_behaviors:
                raise ConfigError(f"lambda has {len(self.lam)} entries for {n_behaviors} behaviors")
            return self.lam
        if n_behaviors == 2:
            return (0.2, 0.8)
        if n_behaviors == 3:
            return (0.2, 0.4, 0.4)
        return (1.0,) * n_behaviors

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        if out["lam"] is not None:
            out["lam"] = list(out["lam"])
        return out

    @classmethod
    def fields(cls) -> dict[str, Any]:
        return {f.name: f for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "ModelConfig":
        known = cls.fields()
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: coerce(k, v) for k, v in values.items()})

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def coerce(key: str, value: Any) -> Any:
    """Convert a string value from a config file or flag to the field's type."""
    if not isinstance(value, str):
        return value
    default = ModelConfig.fields()[key].default
    if key == "lam":
        if value.lower() in ("", "none"):
            return None
        return tuple(float(x) for x in value.replace(",", " ").split())
    try:
        if isinstance(default, bool):
            return _BOOL[value.strip().lower()]
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Flat ``key = value`` lines (``#`` comments); a ``.json`` file is read as a JSON object."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return dict(json.loads(text))
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out
