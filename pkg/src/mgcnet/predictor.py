from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

PROB_FLOOR = 1e-12


def predict_behavior(B: Tensor, O: Tensor) -> tuple[Tensor, np.ndarray]:
    """Softmax over ``B . o_i``; argmax keeps the smallest index among ties."""
    b_hat = ag.softmax(B @ ag.transpose(O), axis=-1)
    return b_hat, np.argmax(b_hat.data, axis=-1)


def score_items(S: Tensor, H0: Tensor) -> Tensor:
    """Probability over the whole item vocabulary from initial embeddings."""
    return ag.softmax(S @ ag.transpose(H0), axis=-1)


def _one_hot(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.intp)
    out = np.zeros((idx.shape[0], n))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def binary_sum_loss(probs: Tensor, target, pos_weight=None) -> Tensor:
    """``-sum_i [w_i y_i log p_i + (1 - y_i) log(1 - p_i)]`` per row, clamped away from 0 and 1."""
    n = probs.shape[-1]
    y = _one_hot(target, n)
    p = ag.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pos = y if pos_weight is None else y * np.asarray(pos_weight, dtype=np.float64)[None, :]
    terms = ag.log(p) * Tensor(pos) + ag.log(1.0 - p) * Tensor(1.0 - y)
    return -ag.sum(terms, axis=-1)


def categorical_loss(probs: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.intp)
    p = ag.clip(probs[np.arange(target.shape[0]), target], PROB_FLOOR, 1.0)
    return -ag.log(p)


def compute_losses(
    y_hat: Tensor,
    b_hat: Tensor,
    target_item,
    target_behavior,
    lam,
    gamma: float,
    task: str = "task2",
    item_loss: str = "literal",
) -> tuple[Tensor, Tensor, Tensor]:
    """Batch-mean item loss, behavior loss and the loss actually optimized.

    Task 1 optimizes the item loss alone.
    """
    if item_loss == "literal":
        l_item = ag.mean(binary_sum_loss(y_hat, target_item))
    else:
        l_item = ag.mean(categorical_loss(y_hat, target_item))
    l_bhv = ag.mean(binary_sum_loss(b_hat, target_behavior, lam))
    if task == "task1" or gamma == 0:
        return l_item, l_bhv, l_item
    return l_item, l_bhv, l_item + l_bhv * float(gamma)
