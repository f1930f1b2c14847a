"""Multi-behavior session datasets: ingest, filtering, augmentation, splits, synthesis.

On-disk formats
---------------
* JSONL sessions: ``{"session_id": ..., "events": [{"item", "behavior", "ts"}, ...]}``
* TSV events: ``session_id<TAB>item<TAB>behavior<TAB>ts``, grouped by session
* processed examples: JSONL ``{"prefix": [[item, behavior], ...], "target_item", "target_behavior"}``
  next to a vocab sidecar ``index<TAB>external_id<TAB>count``
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed input or a dataset that cannot be used."""


class ConfigError(ValueError):
    """Invalid configuration values."""


@dataclass(frozen=True)
class Event:
    item_id: str
    behavior: str
    ts: int


@dataclass
class Session:
    session_id: str
    events: list[Event]

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class SessionExample:
    prefix: tuple[tuple[int, int], ...]
    target_item: int
    target_behavior: int

    def to_json(self) -> dict:
        return {
            "prefix": [list(p) for p in self.prefix],
            "target_item": self.target_item,
            "target_behavior": self.target_behavior,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SessionExample":
        return cls(tuple((int(i), int(b)) for i, b in obj["prefix"]), int(obj["target_item"]), int(obj["target_behavior"]))


@dataclass
class Vocab:
    """Dense bijection between external ids and ``0..n-1``."""

    itos: list[str] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    stoi: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * len(self.itos)
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    @classmethod
    def from_counts(cls, counts: dict[str, int], order: Sequence[str] | None = None) -> "Vocab":
        """Ids in ``order`` when given, else by descending count then id."""
        if order is None:
            order = sorted(counts, key=lambda k: (-counts[k], k))
        return cls(list(order), [int(counts.get(k, 0)) for k in order])

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, key: str) -> bool:
        return key in self.stoi

    def index(self, key: str) -> int:
        return self.stoi[key]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (s, c) in enumerate(zip(self.itos, self.counts)):
                fh.write(f"{i}\t{s}\t{c}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        itos, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or int(parts[0]) != len(itos):
                    raise DatasetError(f"{path}: malformed vocab line {lineno}")
                itos.append(parts[1])
                counts.append(int(parts[2]))
        return cls(itos, counts)


# ---------------------------------------------------------------- parsing


def _normalize(session_id: str, raw: list[tuple[str, str, int]]) -> Session:
    # stable sort keeps file order among equal timestamps
    ordered = sorted(raw, key=lambda e: e[2])
    events: list[Event] = []
    for item, behavior, ts in ordered:
        if events and events[-1].item_id == item and events[-1].behavior == behavior:
            continue
        events.append(Event(item, behavior, ts))
    return Session(session_id, events)


def parse_sessions(
    path: str | Path, format: str = "jsonl", behaviors: Iterable[str] | None = None
) -> list[Session]:
    """Read sessions in file order, sorting events by ts and collapsing consecutive duplicates.

    When ``behaviors`` is given, any other label is rejected.
    """
    allowed = set(behaviors) if behaviors is not None else None

    def check(label: str, lineno: int) -> None:
        if allowed is not None and label not in allowed:
            raise DatasetError(f"line {lineno}: unknown behavior label {label!r}")

    grouped: dict[str, list[tuple[str, str, int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if format == "jsonl":
                try:
                    obj = json.loads(line)
                    sid = str(obj["session_id"])
                    evs = [(str(e["item"]), str(e["behavior"]), int(e["ts"])) for e in obj["events"]]
                except (ValueError, KeyError, TypeError) as exc:
                    raise DatasetError(f"line {lineno}: malformed session record ({exc})") from None
                for _, b, _ in evs:
                    check(b, lineno)
                grouped.setdefault(sid, []).extend(evs)
            elif format == "tsv":
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise DatasetError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
                sid, item, behavior, ts = parts
                try:
                    ts_i = int(ts)
                except ValueError:
                    raise DatasetError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
                check(behavior, lineno)
                grouped.setdefault(sid, []).append((item, behavior, ts_i))
            else:
                raise ConfigError(f"unknown session format {format!r}")
    return [_normalize(sid, evs) for sid, evs in grouped.items()]


def write_sessions(sessions: Iterable[Session], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            events = [{"item": e.item_id, "behavior": e.behavior, "ts": e.ts} for e in s.events]
            fh.write(json.dumps({"session_id": s.session_id, "events": events}) + "\n")


# ---------------------------------------------------------------- filtering


def preprocess_filter(
    sessions: Sequence[Session], min_session_len: int = 3, min_item_count: int = 5
) -> tuple[list[Session], Vocab]:
    """Drop rare items and short sessions, repeating until neither rule removes anything."""
    if min_session_len < 1:
        raise ConfigError("min_session_len must be >= 1")
    current = list(sessions)
    while True:
        counts = Counter(e.item_id for s in current for e in s.events)
        keep = {k for k, c in counts.items() if c >= min_item_count}
        changed = False
        nxt = []
        for s in current:
            events = [e for e in s.events if e.item_id in keep]
            if len(events) != len(s.events):
                changed = True
                # removing an item can make two identical events adjacent
                events = _normalize(s.session_id, [(e.item_id, e.behavior, e.ts) for e in events]).events
            if len(events) < min_session_len:
                changed = True
                continue
            nxt.append(s if len(events) == len(s.events) else Session(s.session_id, events))
        current = nxt
        if not changed:
            break
    if not current:
        raise DatasetError("empty dataset after filtering")
    counts = Counter(e.item_id for s in current for e in s.events)
    return current, Vocab.from_counts(counts)


def subset_recent(sessions: Sequence[Session], fraction: float) -> list[Session]:
    """Keep the most recent ``fraction`` of sessions ordered by their last timestamp."""
    if not 0 < fraction <= 1:
        raise ConfigError("subset fraction must lie in (0, 1]")
    n_keep = max(1, int(math.ceil(len(sessions) * fraction)))
    order = sorted(range(len(sessions)), key=lambda i: (sessions[i].events[-1].ts if sessions[i].events else 0, i))
    chosen = sorted(order[-n_keep:])
    return [sessions[i] for i in chosen]


# ---------------------------------------------------------------- augmentation


def index_session(session: Session, items: Vocab, behaviors: Vocab) -> list[tuple[int, int]] | None:
    """Map a session onto vocab indices; None when any item or behavior is out of vocabulary."""
    out = []
    for e in session.events:
        if e.item_id not in items or e.behavior not in behaviors:
            return None
        out.append((items.index(e.item_id), behaviors.index(e.behavior)))
    return out


def augment_prefixes(sessions: Iterable[Sequence[tuple[int, int]]], M: int = 8) -> list[SessionExample]:
    """Every proper prefix of every session becomes an example, truncated to its last ``M`` events."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    out = []
    for seq in sessions:
        seq = [tuple(map(int, p)) for p in seq]
        for t in range(1, len(seq)):
            prefix = tuple(seq[max(0, t - M):t])
            item, behavior = seq[t]
            out.append(SessionExample(prefix, item, behavior))
    return out


def write_examples(examples: Iterable[SessionExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json()) + "\n")


def read_examples(path: str | Path) -> list[SessionExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(SessionExample.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}: malformed example on line {lineno} ({exc})") from None
    return out


# ---------------------------------------------------------------- splitting


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Floor each share, then hand leftovers to the largest fractional remainders (earlier split wins ties)."""
    raw = [n * r for r in ratios]
    sizes = [int(math.floor(x + 1e-9)) for x in raw]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def split_dataset(
    sessions: Sequence[Session], ratios: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0
) -> tuple[list[Session], list[Session], list[Session]]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    n = len(sessions)
    perm = np.random.default_rng(seed).permutation(n)
    n_train, n_valid, _ = split_sizes(n, ratios)
    parts = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    return tuple([sessions[i] for i in sorted(p)] for p in parts)  # type: ignore[return-value]


@dataclass
class PreparedData:
    items: Vocab
    behaviors: Vocab
    train_sessions: list[list[tuple[int, int]]]
    train: list[SessionExample]
    valid: list[SessionExample]
    test: list[SessionExample]


def _examples_in_vocab(sessions, items: Vocab, behaviors: Vocab, M: int) -> list[SessionExample]:
    # index with a sentinel for unknown items so examples can be dropped individually
    out = []
    for s in sessions:
        seq = [(items.stoi.get(e.item_id, -1), behaviors.stoi.get(e.behavior, -1)) for e in s.events]
        for ex in augment_prefixes([seq], M):
            if ex.target_item < 0 or ex.target_behavior < 0:
                continue
            if any(i < 0 or b < 0 for i, b in ex.prefix):
                continue
            out.append(ex)
    return out


def prepare_dataset(
    sessions: Sequence[Session],
    *,
    behaviors: Sequence[str] | None = None,
    min_session_len: int = 3,
    min_item_count: int = 5,
    M: int = 8,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    subset_fraction: float | None = None,
    subset_after_filter: bool = False,
) -> PreparedData:
    """Full preprocessing pipeline.

    Filter globally, split by session, rebuild the item vocabulary from the
    train split alone, then expand prefixes. Held-out examples touching items
    unseen in training are dropped one example at a time.
    """
    current = list(sessions)
    if subset_fraction is not None and not subset_after_filter:
        current = subset_recent(current, subset_fraction)
    current, _ = preprocess_filter(current, min_session_len, min_item_count)
    if subset_fraction is not None and subset_after_filter:
        current = subset_recent(current, subset_fraction)
    train_s, valid_s, test_s = split_dataset(current, ratios, seed)
    train_s, items = preprocess_filter(train_s, min_session_len, min_item_count)
    if behaviors is None:
        seen = {e.behavior for s in current for e in s.events}
        behaviors = sorted(seen)
    bvocab = Vocab.from_counts(Counter(e.behavior for s in train_s for e in s.events), order=list(behaviors))
    train_idx = [index_session(s, items, bvocab) for s in train_s]
    if any(t is None for t in train_idx):
        raise DatasetError("training session contains a behavior outside the vocabulary")
    data = PreparedData(
        items=items,
        behaviors=bvocab,
        train_sessions=train_idx,  # type: ignore[arg-type]
        train=augment_prefixes(train_idx, M),  # type: ignore[arg-type]
        valid=_examples_in_vocab(valid_s, items, bvocab, M),
        test=_examples_in_vocab(test_s, items, bvocab, M),
    )
    log.info(
        "prepared %d items, %d/%d/%d examples", len(items), len(data.train), len(data.valid), len(data.test)
    )
    return data


# ---------------------------------------------------------------- synthetic corpora

PRESETS = {
    "tmall_like": {"behaviors": ("click", "purchase", "favorite"), "probs": (0.903, 0.036, 0.061), "mean_len": 6.73},
    "yoochoose_like": {"behaviors": ("click", "purchase"), "probs": (0.951, 0.049), "mean_len": 6.18},
    "planted_rule": {"behaviors": ("click", "purchase"), "mean_len": 6.0},
}


def _draw_length(rng: np.random.Generator, mean_len: float, max_len: int = 50) -> int:
    return int(min(max_len, 3 + rng.poisson(mean_len - 3)))


def _iid_sessions(rng, n_sessions, behaviors, probs, mean_len, n_items) -> list[Session]:
    # Zipf-like item popularity
    pop = 1.0 / np.arange(1, n_items + 1) ** 0.8
    pop /= pop.sum()
    out = []
    for s in range(n_sessions):
        L = _draw_length(rng, mean_len)
        events: list[Event] = []
        while len(events) < L:
            item = f"i{int(rng.choice(n_items, p=pop))}"
            beh = behaviors[int(rng.choice(len(behaviors), p=probs))]
            if events and events[-1].item_id == item and events[-1].behavior == beh:
                continue
            events.append(Event(item, beh, len(events)))
        out.append(Session(f"s{s}", events))
    return out


def _planted_sessions(rng, n_sessions, n_categories, items_per_category, purchase_prob, mean_len) -> list[Session]:
    n_items = n_categories * items_per_category
    out = []
    for s in range(n_sessions):
        L = _draw_length(rng, mean_len)
        seq: list[tuple[int, str]] = []
        while len(seq) < L:
            run = 0
            while run < len(seq) and seq[-1 - run][1] == "click" and (
                seq[-1 - run][0] // items_per_category == seq[-1][0] // items_per_category
            ):
                run += 1
            if run >= 2 and rng.random() < purchase_prob:
                seq.append((seq[-run][0], "purchase"))
                continue
            item = int(rng.integers(n_items))
            if seq and seq[-1] == (item, "click"):
                continue
            seq.append((item, "click"))
        out.append(Session(f"s{s}", [Event(f"i{i}", b, t) for t, (i, b) in enumerate(seq)]))
    return out


def generate_synthetic(
    preset: str,
    n_sessions: int,
    seed: int,
    *,
    n_items: int | None = None,
    n_categories: int = 10,
    items_per_category: int = 10,
    purchase_prob: float = 0.9,
) -> list[Session]:
    """Seeded synthetic corpus.

    ``tmall_like`` and ``yoochoose_like`` draw i.i.d. behaviors at the presets'
    marginal rates. ``planted_rule`` assigns item ``i`` to category
    ``i // items_per_category``; once the trailing clicks hold two or more
    same-category items, the first of them is purchased with probability
    ``purchase_prob``. Every other step is a uniform click.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if n_sessions < 1:
        raise ConfigError("n_sessions must be >= 1")
    rng = np.random.default_rng(seed)
    spec = PRESETS[preset]
    if preset == "planted_rule":
        return _planted_sessions(rng, n_sessions, n_categories, items_per_category, purchase_prob, spec["mean_len"])
    if n_items is None:
        n_items = max(20, n_sessions // 5)
    return _iid_sessions(rng, n_sessions, spec["behaviors"], np.asarray(spec["probs"]), spec["mean_len"], n_items)
