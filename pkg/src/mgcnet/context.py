"""Behavioral context-aware item representations.

A GRU over ``[initial item embedding || behavior embedding]`` yields the local
intention at each prefix position; that intention attends (by cosine) over the
item's global-graph neighbors, and the result is mixed into the global
representation with the intention factor.

Batched shapes: ``items``/``behaviors`` are ``(B, L)`` index arrays padded at the
end, ``lengths`` is ``(B,)``.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .graph import GraphArrays


def encode_local_sequence(items, behaviors, H0: Tensor, O: Tensor, params) -> Tensor:
    """GRU hidden states ``(B, L, d)`` from a zero initial state.

    Padding sits at the end of each row, so valid positions never see it.
    """
    items = np.asarray(items, dtype=np.intp)
    behaviors = np.asarray(behaviors, dtype=np.intp)
    if items.ndim != 2 or items.shape[1] == 0:
        raise ValueError("encode_local_sequence: empty prefix")
    B, L = items.shape
    d = H0.shape[1]
    q = ag.concat([ag.row_select(H0, items), ag.row_select(O, behaviors)], axis=-1)  # (B, L, 2d)
    xr = q @ params["gru.W_xr"] + params["gru.b_r"]
    xz = q @ params["gru.W_xz"] + params["gru.b_z"]
    xn = q @ params["gru.W_xn"] + params["gru.b_xn"]
    h = Tensor(np.zeros((B, d)))
    states = []
    for t in range(L):
        r = ag.sigmoid(xr[:, t] + h @ params["gru.W_hr"])
        z = ag.sigmoid(xz[:, t] + h @ params["gru.W_hz"])
        n = ag.tanh(xn[:, t] + r * (h @ params["gru.W_hn"] + params["gru.b_hn"]))
        h = (1.0 - z) * n + z * h
        states.append(h)
    return ag.stack(states, axis=1)


def context_attend(c: Tensor, items, lengths, ga: GraphArrays, Hg: Tensor, params) -> Tensor:
    """Local representation ``(B, L, d)``: cosine attention of each position's GRU state over
    the global representations of its inbound neighbors (union over relations).

    Positions whose item has no neighbor, and padding, get zeros.
    """
    items = np.asarray(items, dtype=np.intp)
    B, L, d = c.shape
    valid = np.arange(L)[None, :] < np.asarray(lengths)[:, None]
    rows = np.flatnonzero((valid & ga.has_union[items]).reshape(-1))
    if rows.size == 0:
        return Tensor(np.zeros((B, L, d)))
    nbr = ga.union_neighbors[items.reshape(-1)[rows]]  # (R, U)
    mask = ga.union_mask[items.reshape(-1)[rows]]
    R, U = nbr.shape
    local = ag.reshape(ag.reshape(c, (B * L, d))[rows] @ params["ctx.W_l"], (R, 1, d))
    glob = ag.row_select(Hg @ params["ctx.W_g"], nbr)  # (R, U, d)
    alpha = ag.softmax(ag.leaky_relu(ag.cosine_similarity(local, glob)), axis=-1, mask=mask)
    hl = ag.sum(ag.reshape(alpha, (R, U, 1)) * ag.row_select(Hg, nbr), axis=1)
    return ag.reshape(ag.scatter_rows(hl, rows, B * L), (B, L, d))


def fuse_item_representation(hg: Tensor, hl: Tensor, beta: float = 0.1) -> Tensor:
    if beta == 0:
        return hg
    return hg + hl * float(beta)
