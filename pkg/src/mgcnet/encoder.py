"""Relational attention over the global graph, producing global item representations.

Row-vector convention throughout: a weight ``W`` acts as ``h @ W``.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .graph import GraphArrays, RelationBlock


def edge_feature(weights: np.ndarray, transform: str = "log1p") -> np.ndarray:
    if transform == "log1p":
        return np.log1p(weights)
    if transform == "raw":
        return weights.astype(np.float64)
    raise ValueError(f"unknown weight transform {transform!r}")


def relation_scores(H: Tensor, block: RelationBlock, p: dict[str, Tensor], transform: str = "log1p"):
    """Attention weights over each supported node's inbound neighbors, plus the transformed neighbor rows."""
    d = H.shape[1]
    n_r, width = block.neighbors.shape
    Ht = ag.reshape(ag.row_select(H, block.targets) @ p["W_t"], (n_r, 1, d))
    Hs = H @ p["W_s"]
    Hs_n = ag.row_select(Hs, block.neighbors)  # (n_r, width, d)
    w = Tensor(edge_feature(block.weights, transform)[..., None])
    e = ag.dot(Ht + Hs_n + w * p["W_w"], p["a"])  # (n_r, width)
    alpha = ag.softmax(ag.leaky_relu(e), axis=-1, mask=block.mask)
    return alpha, Hs_n


def relation_attention(H: Tensor, block: RelationBlock, p: dict[str, Tensor], transform: str = "log1p") -> Tensor:
    """Per-relation aggregation; nodes without inbound neighbors get the zero vector."""
    n, d = H.shape
    if block.targets.size == 0:
        return Tensor(np.zeros((n, d)))
    alpha, Hs_n = relation_scores(H, block, p, transform)
    n_r, width = block.neighbors.shape
    rows = ag.sum(ag.reshape(alpha, (n_r, width, 1)) * Hs_n, axis=1)
    return ag.scatter_rows(rows, block.targets, n)


def cross_relation_fuse(relation_outputs: list[Tensor], H: Tensor, W_res: Tensor) -> Tensor:
    """Mean over the full relation set plus a linear residual of the previous layer."""
    total = relation_outputs[0]
    for h in relation_outputs[1:]:
        total = total + h
    return total * (1.0 / len(relation_outputs)) + H @ W_res


def layer_params(params, k: int, r: int) -> dict[str, Tensor]:
    prefix = f"enc{k}.r{r}."
    return {name: params[prefix + name] for name in ("W_t", "W_s", "a", "W_w")}


def encode_global(ga: GraphArrays, params, K: int, transform: str = "log1p") -> Tensor:
    H = params["item_emb"]
    for k in range(K):
        outs = [relation_attention(H, block, layer_params(params, k, r), transform) for r, block in enumerate(ga.blocks)]
        H = cross_relation_fuse(outs, H, params[f"enc{k}.W_res"])
    return H
