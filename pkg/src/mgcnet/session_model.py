"""Session and behavior-intent representations.

Batched shapes: messages ``(B, L, d)``, padding at the end of each row,
``lengths`` ``(B,)``. Position embeddings are indexed from the end of the
prefix, so the most recent item always takes row 0 of the table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def valid_mask(lengths, L: int) -> np.ndarray:
    return np.arange(L)[None, :] < np.asarray(lengths)[:, None]


def reversed_positions(lengths, L: int) -> np.ndarray:
    """0-based row into the position table: ``length - 1 - t`` for valid ``t``, 0 on padding."""
    rev = np.asarray(lengths)[:, None] - 1 - np.arange(L)[None, :]
    return np.maximum(rev, 0)


def build_message(h: Tensor, behaviors, next_behavior, lengths, params) -> Tensor:
    """``tanh(W_0 [h || o_i || o_next || p_rev])`` at every position."""
    behaviors = np.asarray(behaviors, dtype=np.intp)
    next_behavior = np.asarray(next_behavior, dtype=np.intp)
    B, L = behaviors.shape
    M = params["position_emb"].shape[0]
    if np.max(lengths) > M:
        raise ValueError(f"prefix length {int(np.max(lengths))} exceeds max session length {M}")
    O = params["behavior_emb"]
    parts = [
        h,
        ag.row_select(O, behaviors),
        ag.row_select(O, np.repeat(next_behavior[:, None], L, axis=1)),
        ag.row_select(params["position_emb"], reversed_positions(lengths, L)),
    ]
    return ag.tanh(ag.concat(parts, axis=-1) @ params["sess.W_0"])


def attention_pool(items: Tensor, anchor: Tensor, p: dict[str, Tensor], mask=None, normalize: bool = False) -> Tensor:
    """Weighted sum of ``items`` (..., L, d) with scores ``r . sigmoid(W_1 m_i + W_2 anchor + b)``.

    Scores are used as-is unless ``normalize`` asks for a masked softmax over positions.
    """
    d = items.shape[-1]
    lead = items.shape[:-2]
    L = items.shape[-2]
    a = ag.reshape(anchor, lead + (1, d)) @ p["W_2"]
    scores = ag.dot(ag.sigmoid(items @ p["W_1"] + a + p["b"]), p["r"])  # (..., L)
    if normalize:
        scores = ag.softmax(scores, axis=-1, mask=mask)
    elif mask is not None:
        scores = scores * Tensor(np.asarray(mask, dtype=np.float64))
    return ag.sum(ag.reshape(scores, lead + (L, 1)) * items, axis=-2)


def last_position(x: Tensor, lengths) -> Tensor:
    lengths = np.asarray(lengths, dtype=np.intp)
    return x[np.arange(len(lengths)), lengths - 1]


@dataclass
class SessionRepr:
    S: Tensor
    s_g: Tensor
    s_c: Tensor
    s_mean: Tensor


def compose_session(
    m: Tensor,
    lengths,
    params,
    use_general: bool = True,
    use_current: bool = True,
    normalize: bool = False,
) -> SessionRepr:
    B, L, d = m.shape
    mask = valid_mask(lengths, L)
    s_mean = ag.sum(m * Tensor(mask[..., None].astype(np.float64)), axis=1) * Tensor(
        1.0 / np.asarray(lengths, dtype=np.float64)[:, None]
    )
    zero = Tensor(np.zeros((B, d)))
    s_g = attention_pool(m, s_mean, params.attention("general"), mask, normalize) if use_general else zero
    s_c = attention_pool(m, last_position(m, lengths), params.attention("current"), mask, normalize) if use_current else zero
    S = ag.tanh(ag.concat([s_g, s_c], axis=-1) @ params["sess.W_c"])
    return SessionRepr(S, s_g, s_c, s_mean)


def behavior_intent(c: Tensor, lengths, params, normalize: bool = False) -> Tensor:
    """``tanh(W_bhv C + b_bhv)`` with ``C`` the GRU states pooled around the last state."""
    mask = valid_mask(lengths, c.shape[1])
    C = attention_pool(c, last_position(c, lengths), params.attention("behavior"), mask, normalize)
    return ag.tanh(C @ params["bhv.W"] + params["bhv.b"])
