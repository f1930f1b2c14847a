from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .config import ModelConfig

ATTENTION_INSTANCES = ("general", "current", "behavior")


class ModelParams(dict):
    """Ordered mapping ``name -> Tensor`` holding every trainable array of the model."""

    @classmethod
    def init(cls, config: ModelConfig, n_items: int, n_behaviors: int, rng: np.random.Generator | None = None):
        """Gaussian(0, init_std) for every entry, drawn in a fixed name order."""
        rng = np.random.default_rng(config.seed) if rng is None else rng
        d = config.d
        shapes: dict[str, tuple[int, ...]] = {
            "item_emb": (n_items, d),
            "behavior_emb": (n_behaviors, d),
            "position_emb": (config.M, d),
        }
        n_rel = n_behaviors * n_behaviors
        for k in range(config.K):
            for r in range(n_rel):
                p = f"enc{k}.r{r}."
                shapes[p + "W_t"] = (d, d)
                shapes[p + "W_s"] = (d, d)
                shapes[p + "a"] = (d,)
                shapes[p + "W_w"] = (d,)
            shapes[f"enc{k}.W_res"] = (d, d)
        for gate in ("r", "z", "n"):
            shapes[f"gru.W_x{gate}"] = (2 * d, d)
            shapes[f"gru.W_h{gate}"] = (d, d)
        for b in ("b_r", "b_z", "b_xn", "b_hn"):
            shapes[f"gru.{b}"] = (d,)
        shapes["ctx.W_l"] = (d, d)
        shapes["ctx.W_g"] = (d, d)
        shapes["sess.W_0"] = (4 * d, d)
        instances = ("general", "current") if config.tie_attention else ATTENTION_INSTANCES
        for inst in instances:
            shapes[f"att.{inst}.W_1"] = (d, d)
            shapes[f"att.{inst}.W_2"] = (d, d)
            shapes[f"att.{inst}.r"] = (d,)
            shapes[f"att.{inst}.b"] = (d,)
        shapes["sess.W_c"] = (2 * d, d)
        shapes["bhv.W"] = (d, d)
        shapes["bhv.b"] = (d,)
        out = cls()
        for name, shape in shapes.items():
            out[name] = Tensor(rng.normal(0.0, config.init_std, size=shape), requires_grad=True, name=name)
        return out

    def attention(self, instance: str) -> dict[str, Tensor]:
        if f"att.{instance}.W_1" not in self:
            instance = "general"  # tied: the behavior pool reuses the general-interest weights
        return {k: self[f"att.{instance}.{k}"] for k in ("W_1", "W_2", "r", "b")}

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self[k].data = v.copy()

    def frozen(self) -> "ModelParams":
        """Gradient-free view sharing the same arrays; used for inference."""
        out = ModelParams()
        for k, t in self.items():
            out[k] = Tensor(t.data, requires_grad=False, name=k)
        return out

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.values()))

    # ------------------------------------------------------------ checkpoints

    def to_json(self) -> dict:
        return {k: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()} for k, t in self.items()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def from_json(cls, obj: dict) -> "ModelParams":
        out = cls()
        for k, spec in obj.items():
            data = np.asarray(spec["values"], dtype=np.float64).reshape(spec["shape"])
            out[k] = Tensor(data, requires_grad=True, name=k)
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
