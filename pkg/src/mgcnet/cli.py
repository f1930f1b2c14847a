"""Command-line entry point: synth, preprocess, build-graph, train, eval, predict.

Every invocation writes into its own run directory (``--out``) and echoes the
effective configuration there as ``config.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import ModelConfig, coerce, load_config_file
from .graph import GlobalGraph, build_global_graph, graph_arrays
from .metrics import evaluate
from .model import Batch, forward
from .params import ModelParams
from .sessions import (
    PRESETS,
    ConfigError,
    DatasetError,
    SessionExample,
    Vocab,
    generate_synthetic,
    parse_sessions,
    prepare_dataset,
    read_examples,
    write_examples,
    write_sessions,
)
from .train import train

log = logging.getLogger("mgcnet")

CHECKPOINT = "checkpoint.json"
# extra spellings for frequently typed fields
ALIASES = {"batch_size": ["--batch"], "eval_k": ["--k"], "K": ["--layers"]}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_model_flags(p: argparse.ArgumentParser, skip: Sequence[str] = ()) -> None:
    g = p.add_argument_group("model configuration (override --config)")
    g.add_argument("--config", help="key = value file (or .json) with ModelConfig fields")
    for name, f in ModelConfig.fields().items():
        if name in skip:
            continue
        g.add_argument(
            _flag(name), *ALIASES.get(name, []), dest=f"cfg_{name}", default=None, metavar="V",
            help=f"default: {f.default}",
        )


def _model_overrides(args) -> dict[str, Any]:
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in ModelConfig.fields():
        v = getattr(args, f"cfg_{name}", None)
        if v is not None:
            values[name] = v
    return values


def _effective_config(args, base: dict[str, Any] | None = None) -> ModelConfig:
    merged = dict(base or {})
    merged.update(_model_overrides(args))
    unknown = sorted(set(merged) - set(ModelConfig.fields()))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ModelConfig(**{k: coerce(k, v) for k, v in merged.items()})


def _run_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "log.txt", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("mgcnet").addHandler(handler)
    return out


def _echo(out: Path, command: str, args, config: ModelConfig | None = None) -> None:
    echo = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if not k.startswith("cfg_") and k != "func"},
    }
    if config is not None:
        echo["model_config"] = config.to_dict()
    _write_json(out / "config.json", echo)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    out = _run_dir(args)
    sessions = generate_synthetic(
        args.preset, args.n, args.seed, n_items=args.n_items, n_categories=args.n_categories,
        items_per_category=args.items_per_category, purchase_prob=args.purchase_prob,
    )
    write_sessions(sessions, out / "sessions.jsonl")
    _echo(out, "synth", args)
    print(f"wrote {len(sessions)} sessions to {out / 'sessions.jsonl'}")
    return 0


def cmd_preprocess(args) -> int:
    out = _run_dir(args)
    behaviors = args.behaviors.split(",") if args.behaviors else None
    sessions = parse_sessions(args.input, format=args.format, behaviors=behaviors)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    data = prepare_dataset(
        sessions, behaviors=behaviors, min_session_len=args.min_session_len, min_item_count=args.min_item_count,
        M=args.M, ratios=ratios, seed=args.seed, subset_fraction=args.subset_fraction,
        subset_after_filter=args.subset_after_filter,
    )
    data.items.save(out / "items.tsv")
    data.behaviors.save(out / "behaviors.tsv")
    with open(out / "train_sessions.jsonl", "w", encoding="utf-8") as fh:
        for seq in data.train_sessions:
            fh.write(json.dumps([list(p) for p in seq]) + "\n")
    for split in ("train", "valid", "test"):
        write_examples(getattr(data, split), out / f"{split}.jsonl")
    _echo(out, "preprocess", args)
    print(
        f"{len(data.items)} items, {len(data.behaviors)} behaviors; "
        f"{len(data.train)}/{len(data.valid)}/{len(data.test)} train/valid/test examples"
    )
    return 0


def _load_vocabs(data_dir: Path) -> tuple[Vocab, Vocab]:
    return Vocab.load(data_dir / "items.tsv"), Vocab.load(data_dir / "behaviors.tsv")


def cmd_build_graph(args) -> int:
    out = _run_dir(args)
    data_dir = Path(args.data)
    items, behaviors = _load_vocabs(data_dir)
    with open(data_dir / "train_sessions.jsonl", encoding="utf-8") as fh:
        seqs = [[tuple(p) for p in json.loads(line)] for line in fh if line.strip()]
    graph = build_global_graph(seqs, len(items), behaviors.itos, args.neighbor_cap)
    graph.save(out / "graph.tsv")
    _echo(out, "build-graph", args)
    print(f"{graph.n_edges()} edges over {len(graph.relations)} relations -> {out / 'graph.tsv'}")
    return 0


def _check_graph(graph: GlobalGraph, items: Vocab, behaviors: Vocab) -> None:
    if graph.n_items != len(items) or list(graph.behaviors) != list(behaviors.itos):
        raise DatasetError("graph does not match the preprocessed vocabularies")


def save_checkpoint(path: Path, params: ModelParams, config: ModelConfig, graph: GlobalGraph, **extra) -> None:
    obj = {"config": config.to_dict(), "n_items": graph.n_items, "behaviors": list(graph.behaviors), **extra}
    obj["params"] = params.to_json()
    path.write_text(json.dumps(obj), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "params" not in obj or "config" not in obj:
        raise DatasetError(f"{path}: not a checkpoint")
    return ModelParams.from_json(obj.pop("params")), obj


def cmd_train(args) -> int:
    out = _run_dir(args)
    config = _effective_config(args)
    config = config.replace(seed=args.seed)
    data_dir = Path(args.data)
    items, behaviors = _load_vocabs(data_dir)
    graph = GlobalGraph.load(args.graph)
    _check_graph(graph, items, behaviors)
    train_ex = read_examples(data_dir / "train.jsonl")
    valid_ex = read_examples(data_dir / "valid.jsonl") if (data_dir / "valid.jsonl").exists() else []
    _echo(out, "train", args, config)
    result = train(train_ex, valid_ex, graph, config, log_path=out / "train_log.jsonl")
    save_checkpoint(out / CHECKPOINT, result.params, config, graph, best_epoch=result.best_epoch)
    for entry in result.log:
        print(json.dumps(entry))
    print(f"best epoch {result.best_epoch}; checkpoint -> {out / CHECKPOINT}")
    return 0


def cmd_eval(args) -> int:
    out = _run_dir(args)
    params, meta = load_checkpoint(args.checkpoint)
    config = _effective_config(args, meta["config"])
    data_dir = Path(args.data)
    items, behaviors = _load_vocabs(data_dir)
    graph = GlobalGraph.load(args.graph)
    _check_graph(graph, items, behaviors)
    examples = read_examples(data_dir / f"{args.split}.jsonl")
    _echo(out, "eval", args, config)
    report = evaluate(params, examples, graph, config, K=config.eval_k, task=config.task)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "metrics.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.to_table())
    return 0


def _read_session(source: str) -> list[tuple[str, str]]:
    """One session as JSON: a list of ``[item_id, behavior]`` pairs, or a corpus-style ``{"events": [...]}`` record."""
    text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"session input is not JSON ({exc})") from None
    if isinstance(obj, dict):
        obj = obj.get("events", [])
        obj = [[e.get("item", e.get("item_id")), e["behavior"]] if isinstance(e, dict) else e for e in obj]
    try:
        return [(str(i), str(b)) for i, b in obj]
    except (TypeError, ValueError):
        raise DatasetError("session input must be a list of [item_id, behavior] pairs") from None


def cmd_predict(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    config = _effective_config(args, meta["config"])
    data_dir = Path(args.data)
    items, behaviors = _load_vocabs(data_dir)
    graph = GlobalGraph.load(args.graph)
    _check_graph(graph, items, behaviors)
    events = _read_session(args.input)
    prefix = []
    for item, beh in events:
        if beh not in behaviors:
            raise DatasetError(f"unknown behavior {beh!r}")
        if item not in items:
            log.warning("skipping item %r unseen in training", item)
            continue
        prefix.append((items.index(item), behaviors.index(beh)))
    if not prefix:
        raise DatasetError("session has no known items")
    prefix = prefix[-config.M:]
    next_beh = None
    if config.task == "task1":
        if args.next_behavior is None:
            raise ConfigError("task1 prediction needs --next-behavior")
        if args.next_behavior not in behaviors:
            raise DatasetError(f"unknown behavior {args.next_behavior!r}")
        next_beh = np.array([behaviors.index(args.next_behavior)])
    batch = Batch.from_examples([SessionExample(tuple(prefix), 0, 0)])
    frozen = params.frozen()
    res = forward(frozen, graph_arrays(graph), batch, config, behavior_source="predicted", next_behavior=next_beh)
    scores = res.y_hat.data[0]
    top = np.argsort(-scores, kind="stable")[: config.eval_k]
    if config.task == "task2":
        b = int(res.chosen_behavior[0])
        print(f"next behavior: {behaviors.itos[b]} (p={res.b_hat.data[0, b]:.4f})")
    for rank, i in enumerate(top, 1):
        print(f"{rank}\t{items.itos[i]}\t{scores[i]:.6g}")
    if args.out:
        out = _run_dir(args)
        _echo(out, "predict", args, config)
        _write_json(out / "prediction.json", {
            "items": [items.itos[i] for i in top],
            "scores": [float(scores[i]) for i in top],
            "behavior": behaviors.itos[int(res.chosen_behavior[0])] if config.task == "task2" else args.next_behavior,
        })
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgcnet", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{synth,preprocess,build-graph,train,eval,predict}")
    sub.required = True

    def add(name, func, help):
        p = sub.add_parser(name, help=help, allow_abbrev=False)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic session corpus")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--n", type=int, required=True, help="number of sessions")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-items", type=int, default=None)
    p.add_argument("--n-categories", type=int, default=10)
    p.add_argument("--items-per-category", type=int, default=10)
    p.add_argument("--purchase-prob", type=float, default=0.9)
    p.add_argument("--out", required=True, help="run directory")

    p = add("preprocess", cmd_preprocess, "filter, split and augment a raw corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("jsonl", "tsv"), default="jsonl")
    p.add_argument("--behaviors", default=None, help="comma-separated behavior vocabulary, in index order")
    p.add_argument("--min-session-len", type=int, default=3)
    p.add_argument("--min-item-count", type=int, default=5)
    p.add_argument("--M", type=int, default=8, help="max prefix length kept per example")
    p.add_argument("--ratios", default="0.7,0.1,0.2", help="train,valid,test fractions")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--subset-fraction", type=float, default=None, help="keep the most recent fraction")
    p.add_argument("--subset-after-filter", action="store_true")
    p.add_argument("--out", required=True)

    p = add("build-graph", cmd_build_graph, "build the global item graph from the train split")
    p.add_argument("--data", required=True, help="preprocess run directory")
    p.add_argument("--neighbor-cap", type=int, default=12, help="0 disables the cap")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_model_flags(p, skip=("seed",))
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    _add_model_flags(p)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "rank next items for one session read from --input")
    p.add_argument("--data", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="JSON session file, '-' for stdin")
    p.add_argument("--next-behavior", default=None, help="ground-truth next behavior (task1)")
    _add_model_flags(p)
    p.add_argument("--out", default=None)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    else:
        logging.getLogger("mgcnet").setLevel(logging.INFO)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"mgcnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        for h in list(logging.getLogger("mgcnet").handlers):
            if isinstance(h, logging.FileHandler):
                logging.getLogger("mgcnet").removeHandler(h)
                h.close()


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
