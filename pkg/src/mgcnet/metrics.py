"""HR@K / MRR@K per next-behavior slice, next-behavior recall, and dataset evaluation."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .encoder import encode_global
from .graph import GlobalGraph, graph_arrays
from .model import Batch, forward
from .sessions import SessionExample


def rank_of(scores, target: int) -> int:
    """1 + items scored strictly higher + equal-scored items with a smaller index."""
    scores = np.asarray(scores)
    s = scores[target]
    return int(1 + np.sum(scores > s) + np.sum(scores[:target] == s))


def rank_metrics(scores, target: int, K: int = 20) -> tuple[int, float]:
    if K < 1:
        raise ValueError("K must be >= 1")
    rank = rank_of(scores, target)
    if rank <= K:
        return 1, 1.0 / rank
    return 0, 0.0


def batch_ranks(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rank_of` over rows."""
    rows = np.arange(scores.shape[0])
    s = scores[rows, targets][:, None]
    higher = np.sum(scores > s, axis=1)
    before = np.arange(scores.shape[1])[None, :] < targets[:, None]
    ties = np.sum((scores == s) & before, axis=1)
    return 1 + higher + ties


def behavior_recall(predictions: Sequence[int], targets: Sequence[int], n_classes: int | None = None) -> dict[int, float | None]:
    """Recall per class; a class with no targets maps to None."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets differ in length")
    if n_classes is None:
        n_classes = int(max(predictions.max(initial=-1), targets.max(initial=-1)) + 1)
    out: dict[int, float | None] = {}
    for c in range(n_classes):
        sel = targets == c
        out[c] = float(np.mean(predictions[sel] == c)) if sel.any() else None
    return out


@dataclass
class SliceMetrics:
    hr: float
    mrr: float
    n: int


@dataclass
class MetricsReport:
    K: int
    task: str
    behaviors: list[str]
    per_behavior: dict[str, SliceMetrics | None]
    overall: SliceMetrics
    recall: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def sl(m):
            return None if m is None else {f"hr@{self.K}": m.hr, f"mrr@{self.K}": m.mrr, "n_examples": m.n}

        out = {
            "K": self.K,
            "task": self.task,
            "per_behavior": {b: sl(self.per_behavior[b]) for b in self.behaviors},
            "overall": sl(self.overall),
        }
        if self.recall:
            out["behavior_recall"] = {b: self.recall[b] for b in self.behaviors}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        head = f"{'behavior':<12}{'n':>8}{f'HR@{self.K}':>10}{f'MRR@{self.K}':>10}"
        if self.recall:
            head += f"{'recall':>10}"
        lines = [head]
        for b in self.behaviors + ["overall"]:
            m = self.overall if b == "overall" else self.per_behavior[b]
            if m is None:
                row = f"{b:<12}{0:>8}{'-':>10}{'-':>10}"
            else:
                row = f"{b:<12}{m.n:>8}{100 * m.hr:>10.2f}{100 * m.mrr:>10.2f}"
            if self.recall:
                r = self.recall.get(b)
                row += f"{'-' if r is None else f'{100 * r:.2f}':>10}"
            lines.append(row)
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("behavior,n_examples,hr,mrr,recall\n")
        for b in self.behaviors:
            m = self.per_behavior[b]
            r = self.recall.get(b)
            buf.write(f"{b},{0 if m is None else m.n},{'' if m is None else m.hr},{'' if m is None else m.mrr},{'' if r is None else r}\n")
        return buf.getvalue()


def _slice(hits: np.ndarray, rr: np.ndarray) -> SliceMetrics:
    return SliceMetrics(float(hits.mean()), float(rr.mean()), int(hits.size))


def predict_all(
    params,
    examples: Sequence[SessionExample],
    graph: GlobalGraph,
    config: ModelConfig,
    behavior_source: str = "target",
    batch_size: int = 1024,
    ga=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Item scores ``(N, n_items)``, predicted behaviors and fed behaviors for every example."""
    frozen = params.frozen()
    ga = graph_arrays(graph) if ga is None else ga
    Hg = encode_global(ga, frozen, config.K, config.weight_transform)
    scores, chosen, fed = [], [], []
    for start in range(0, len(examples), batch_size):
        batch = Batch.from_examples(examples[start:start + batch_size])
        out = forward(frozen, ga, batch, config, behavior_source, Hg=Hg)
        scores.append(out.y_hat.data)
        chosen.append(out.chosen_behavior)
        fed.append(out.fed_behavior)
    return np.concatenate(scores), np.concatenate(chosen), np.concatenate(fed)


def evaluate(
    params,
    examples: Sequence[SessionExample],
    graph: GlobalGraph,
    config: ModelConfig,
    K: int = 20,
    task: str | None = None,
    ga=None,
) -> MetricsReport:
    """Rank every target over the full vocabulary and slice by the target behavior.

    Task 1 feeds the ground-truth next behavior; Task 2 feeds the predicted
    tag and also reports next-behavior recall.
    """
    if not examples:
        raise ValueError("empty evaluation set")
    task = config.task if task is None else task
    source = "target" if task == "task1" else "predicted"
    scores, chosen, _ = predict_all(params, examples, graph, config, source, ga=ga)
    targets = np.array([ex.target_item for ex in examples])
    tb = np.array([ex.target_behavior for ex in examples])
    ranks = batch_ranks(scores, targets)
    hits = (ranks <= K).astype(np.float64)
    rr = np.where(ranks <= K, 1.0 / ranks, 0.0)
    names = list(graph.behaviors)
    per = {}
    for i, b in enumerate(names):
        sel = tb == i
        per[b] = _slice(hits[sel], rr[sel]) if sel.any() else None
    recall = {}
    if task == "task2":
        rec = behavior_recall(chosen, tb, len(names))
        recall = {names[i]: v for i, v in rec.items()}
    return MetricsReport(K, task, names, per, _slice(hits, rr), recall)
