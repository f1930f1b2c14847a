"""Multi-behavior session recommendation with a heterogeneous global item graph."""

from .config import ModelConfig
from .graph import GlobalGraph, build_global_graph
from .params import ModelParams
from .sessions import Session, SessionExample, Vocab, generate_synthetic, prepare_dataset

__all__ = [
    "GlobalGraph",
    "ModelConfig",
    "ModelParams",
    "Session",
    "SessionExample",
    "Vocab",
    "build_global_graph",
    "generate_synthetic",
    "prepare_dataset",
]
