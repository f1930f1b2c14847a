from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import backprop
from .config import ModelConfig
from .graph import GlobalGraph, graph_arrays
from .metrics import evaluate
from .model import Batch, forward
from .optim import AdamState, adam_step, step_decay
from .params import ModelParams
from .predictor import compute_losses
from .sessions import DatasetError, SessionExample

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    best_epoch: int | None = None


def batch_loss(params, ga, batch: Batch, config: ModelConfig, lam):
    """Training-time forward: the ground-truth next behavior always feeds the messages."""
    out = forward(params, ga, batch, config, behavior_source="target")
    return compute_losses(
        out.y_hat, out.b_hat, batch.target_item, batch.target_behavior, lam, config.gamma, config.task, config.item_loss
    )


def train(
    train_examples: Sequence[SessionExample],
    valid_examples: Sequence[SessionExample],
    graph: GlobalGraph,
    config: ModelConfig,
    *,
    log_path: str | Path | None = None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Mini-batch Adam over seeded shuffles, keeping the epoch with the best validation HR@K.

    Without validation examples the final epoch is kept.
    """
    if not train_examples:
        raise DatasetError("empty training set")
    n_beh = len(graph.behaviors)
    lam = config.behavior_weights(n_beh)
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = ModelParams.init(config, graph.n_items, n_beh, rng)
    ga = graph_arrays(graph)
    state = AdamState()
    train_examples = list(train_examples)
    history: list[dict] = []
    best_hr, best_epoch, best = -1.0, None, params.snapshot()
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            lr = step_decay(config.lr, config.lr_decay, config.lr_decay_step, epoch)
            order = rng.permutation(len(train_examples))
            sums = np.zeros(2)
            for start in range(0, len(order), config.batch_size):
                batch = Batch.from_examples([train_examples[i] for i in order[start:start + config.batch_size]])
                params.zero_grad()
                l_item, l_bhv, l_joint = batch_loss(params, ga, batch, config, lam)
                backprop(l_joint)
                arrays = {k: t.data for k, t in params.items()}
                adam_step(arrays, {k: t.grad for k, t in params.items()}, state, lr)
                sums += len(batch) * np.array([l_item.item(), l_bhv.item()])
            entry = {
                "epoch": epoch + 1,
                "L_item": float(sums[0] / len(order)),
                "L_bhv": float(sums[1] / len(order)),
                "lr": float(lr),
                f"val_HR@{config.eval_k}": None,
                f"val_MRR@{config.eval_k}": None,
            }
            if valid_examples:
                rep = evaluate(params, valid_examples, graph, config, K=config.eval_k, ga=ga)
                entry[f"val_HR@{config.eval_k}"] = rep.overall.hr
                entry[f"val_MRR@{config.eval_k}"] = rep.overall.mrr
                if rep.overall.hr > best_hr:
                    best_hr, best_epoch, best = rep.overall.hr, epoch + 1, params.snapshot()
            else:
                best_epoch, best = epoch + 1, params.snapshot()
            history.append(entry)
            log.info("epoch %d %s", epoch + 1, entry)
            if fh:
                fh.write(json.dumps(entry) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    params.load_snapshot(best)
    return TrainResult(params, history, best_epoch)
