"""Full forward pass: global graph -> context -> session -> joint predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .context import context_attend, encode_local_sequence, fuse_item_representation
from .encoder import encode_global
from .graph import GraphArrays
from .predictor import predict_behavior, score_items
from .session_model import SessionRepr, behavior_intent, build_message, compose_session
from .sessions import SessionExample


@dataclass
class Batch:
    items: np.ndarray  # (B, L), zero-padded at the end
    behaviors: np.ndarray  # (B, L)
    lengths: np.ndarray  # (B,)
    target_item: np.ndarray  # (B,)
    target_behavior: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.lengths)

    @classmethod
    def from_examples(cls, examples: Sequence[SessionExample]) -> "Batch":
        if not examples:
            raise ValueError("empty batch")
        L = max(len(ex.prefix) for ex in examples)
        B = len(examples)
        items = np.zeros((B, L), dtype=np.intp)
        behaviors = np.zeros((B, L), dtype=np.intp)
        lengths = np.zeros(B, dtype=np.intp)
        for i, ex in enumerate(examples):
            if not ex.prefix:
                raise ValueError("example with empty prefix")
            n = len(ex.prefix)
            items[i, :n] = [p[0] for p in ex.prefix]
            behaviors[i, :n] = [p[1] for p in ex.prefix]
            lengths[i] = n
        return cls(
            items,
            behaviors,
            lengths,
            np.array([ex.target_item for ex in examples], dtype=np.intp),
            np.array([ex.target_behavior for ex in examples], dtype=np.intp),
        )


@dataclass
class Output:
    y_hat: Tensor  # (B, n_items)
    b_hat: Tensor  # (B, n_behaviors)
    chosen_behavior: np.ndarray  # (B,)
    fed_behavior: np.ndarray  # (B,) next-behavior tag used in the messages
    session: SessionRepr
    B: Tensor


def forward(
    params,
    ga: GraphArrays,
    batch: Batch,
    config: ModelConfig,
    behavior_source: str = "target",
    Hg: Tensor | None = None,
    next_behavior: np.ndarray | None = None,
) -> Output:
    """One batched forward pass.

    ``behavior_source`` picks the next-behavior tag: ``"target"`` (ground truth,
    Task 1 and teacher-forced Task 2 training) or ``"predicted"`` (argmax of the
    behavior head, Task 2 inference). An explicit ``next_behavior`` array wins.
    ``Hg`` may carry a precomputed global representation.
    """
    H0, O = params["item_emb"], params["behavior_emb"]
    if Hg is None:
        Hg = encode_global(ga, params, config.K, config.weight_transform)
    c = encode_local_sequence(batch.items, batch.behaviors, H0, O, params)
    hg_rows = ag.row_select(Hg, batch.items)
    if config.beta != 0:
        hl = context_attend(c, batch.items, batch.lengths, ga, Hg, params)
        h = fuse_item_representation(hg_rows, hl, config.beta)
    else:
        h = hg_rows
    Bv = behavior_intent(c, batch.lengths, params, config.normalize_attention)
    b_hat, chosen = predict_behavior(Bv, O)
    if next_behavior is not None:
        fed = np.asarray(next_behavior, dtype=np.intp)
    elif behavior_source == "target":
        fed = batch.target_behavior
    elif behavior_source == "predicted":
        fed = chosen
    else:
        raise ValueError(f"unknown behavior source {behavior_source!r}")
    m = build_message(h, batch.behaviors, fed, batch.lengths, params)
    sess = compose_session(
        m, batch.lengths, params, config.use_general, config.use_current, config.normalize_attention
    )
    y_hat = score_items(sess.S, H0)
    return Output(y_hat, b_hat, chosen, fed, sess, Bv)
