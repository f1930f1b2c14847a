import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgcnet.sessions import (
    ConfigError,
    DatasetError,
    Event,
    Session,
    SessionExample,
    Vocab,
    augment_prefixes,
    generate_synthetic,
    parse_sessions,
    prepare_dataset,
    preprocess_filter,
    read_examples,
    split_dataset,
    split_sizes,
    subset_recent,
    write_examples,
    write_sessions,
)


def S(sid, items, behavior="click"):
    return Session(sid, [Event(i, behavior, t) for t, i in enumerate(items)])


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


class TestParse:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text("")
        assert parse_sessions(p) == []

    def test_events_sorted_by_ts(self, tmp_path):
        p = tmp_path / "s.jsonl"
        evs = [{"item": x, "behavior": "click", "ts": t} for x, t in (("a", 5), ("b", 2), ("c", 9))]
        write_jsonl(p, [{"session_id": "s", "events": evs}])
        (s,) = parse_sessions(p)
        assert [e.ts for e in s.events] == [2, 5, 9]
        assert [e.item_id for e in s.events] == ["b", "a", "c"]

    def test_consecutive_duplicates_collapse(self, tmp_path):
        p = tmp_path / "s.jsonl"
        evs = [
            {"item": "a", "behavior": "click", "ts": 1},
            {"item": "a", "behavior": "click", "ts": 2},
            {"item": "b", "behavior": "buy", "ts": 3},
        ]
        write_jsonl(p, [{"session_id": "s", "events": evs}])
        (s,) = parse_sessions(p)
        assert s.events == [Event("a", "click", 1), Event("b", "buy", 3)]

    def test_same_item_other_behavior_is_kept(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("s\ta\tclick\t1\ns\ta\tbuy\t2\n")
        (s,) = parse_sessions(p, format="tsv")
        assert len(s) == 2

    def test_ts_ties_keep_file_order(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("s\tb\tclick\t1\ns\ta\tclick\t1\ns\tc\tclick\t0\n")
        (s,) = parse_sessions(p, format="tsv")
        assert [e.item_id for e in s.events] == ["c", "b", "a"]

    def test_tsv_groups_sessions_in_file_order(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("z\ta\tclick\t1\nz\tb\tclick\t2\ny\tc\tclick\t1\n")
        assert [s.session_id for s in parse_sessions(p, format="tsv")] == ["z", "y"]

    def test_malformed_line_named(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text('{"session_id": "s", "events": []}\nnot json\n')
        with pytest.raises(DatasetError, match="line 2"):
            parse_sessions(p)

    def test_unknown_behavior_named(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("s\ta\tclick\t1\ns\tb\tlike\t2\n")
        with pytest.raises(DatasetError, match="'like'"):
            parse_sessions(p, format="tsv", behaviors=["click", "buy"])

    def test_roundtrip(self, tmp_path):
        sessions = generate_synthetic("tmall_like", 20, seed=3)
        p = tmp_path / "s.jsonl"
        write_sessions(sessions, p)
        assert parse_sessions(p) == sessions


class TestFilter:
    def test_all_too_short(self):
        sessions = [S(f"s{i}", ["a", "b"]) for i in range(10)]
        with pytest.raises(DatasetError, match="empty dataset after filtering"):
            preprocess_filter(sessions)

    def test_two_pass_fixed_point(self):
        # a occurs 6 times, b 4 times: b goes first, which shortens s3..s5,
        # and the second pass sees a and c at exactly 5 and stops.
        sessions = [
            S("s1", ["a", "c", "a", "c", "a"]),
            S("s2", ["c", "a", "c", "a", "c"]),
            S("s3", ["a", "b", "c"]),
            S("s4", ["b", "c", "b"]),
            S("s5", ["c", "b", "c"]),
        ]
        out, vocab = preprocess_filter(sessions, min_session_len=3, min_item_count=5)
        assert [s.session_id for s in out] == ["s1", "s2"]
        assert dict(zip(vocab.itos, vocab.counts)) == {"a": 5, "c": 5}

    def test_removal_recollapses_duplicates(self):
        sessions = [S(f"k{i}", ["x", "y", "x"]) for i in range(5)] + [S("r", ["x", "rare", "x", "y"])]
        out, _ = preprocess_filter(sessions, min_session_len=2, min_item_count=5)
        (r,) = [s for s in out if s.session_id == "r"]
        assert [e.item_id for e in r.events] == ["x", "y"]

    def test_clean_corpus_is_identity(self):
        sessions = [S(f"s{i}", ["a", "b", "c"]) for i in range(5)]
        out, vocab = preprocess_filter(sessions)
        assert out == sessions
        assert sorted(vocab.itos) == ["a", "b", "c"]

    def test_output_is_fixed_point(self):
        sessions = generate_synthetic("yoochoose_like", 300, seed=1)
        once, v1 = preprocess_filter(sessions)
        twice, v2 = preprocess_filter(once)
        assert once == twice and v1 == v2

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            preprocess_filter([S("s", ["a"])], min_session_len=0)


class TestAugment:
    def test_length_three(self):
        exs = augment_prefixes([[(1, 0), (2, 0), (3, 1)]])
        assert exs == [
            SessionExample(((1, 0),), 2, 0),
            SessionExample(((1, 0), (2, 0)), 3, 1),
        ]

    def test_truncation_keeps_last_m(self):
        seq = [(i, 0) for i in range(12)]
        exs = augment_prefixes([seq], M=8)
        assert len(exs) == 11
        assert [p[0] for p in exs[-1].prefix] == list(range(3, 11))
        assert exs[-1].target_item == 11

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 15), max_size=10), st.integers(1, 10))
    def test_count_is_sum_of_lengths_minus_one(self, lengths, M):
        seqs = [[(i, 0) for i in range(L)] for L in lengths]
        exs = augment_prefixes(seqs, M)
        assert len(exs) == sum(L - 1 for L in lengths)
        assert all(1 <= len(e.prefix) <= M for e in exs)

    def test_example_io(self, tmp_path):
        exs = augment_prefixes([[(1, 0), (2, 1), (3, 0), (4, 1)]])
        write_examples(exs, tmp_path / "e.jsonl")
        assert read_examples(tmp_path / "e.jsonl") == exs


class TestSplit:
    def test_degenerate(self):
        sessions = [S(f"s{i}", ["a", "b", "c"]) for i in range(9)]
        tr, va, te = split_dataset(sessions, (1, 0, 0), seed=0)
        assert tr == sessions and va == [] and te == []

    def test_sizes_floor_then_distribute(self):
        assert split_sizes(10, (0.7, 0.1, 0.2)) == [7, 1, 2]
        assert split_sizes(11, (0.7, 0.1, 0.2)) == [8, 1, 2]
        assert split_sizes(3, (1 / 3, 1 / 3, 1 / 3)) == [1, 1, 1]

    def test_deterministic(self):
        sessions = [S(f"s{i}", ["a", "b", "c"]) for i in range(100)]
        assert split_dataset(sessions, seed=4) == split_dataset(sessions, seed=4)
        assert split_dataset(sessions, seed=4) != split_dataset(sessions, seed=5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 60), st.integers(0, 1000))
    def test_partition(self, n, seed):
        sessions = [S(f"s{i}", ["a", "b", "c"]) for i in range(n)]
        parts = split_dataset(sessions, seed=seed)
        ids = [s.session_id for p in parts for s in p]
        assert sorted(ids) == sorted(s.session_id for s in sessions)
        assert len(set(ids)) == n

    def test_ratio_sum_checked(self):
        with pytest.raises(ConfigError):
            split_dataset([], (0.5, 0.2, 0.2))


class TestSubset:
    def test_keeps_latest(self):
        sessions = [Session(f"s{i}", [Event("a", "click", 10 - i)]) for i in range(8)]
        kept = subset_recent(sessions, 0.25)
        assert [s.session_id for s in kept] == ["s0", "s1"]


class TestPrepare:
    def test_vocab_from_train_and_unseen_dropped(self):
        sessions = generate_synthetic("tmall_like", 400, seed=2)
        data = prepare_dataset(sessions, behaviors=["click", "purchase", "favorite"], seed=2)
        n = len(data.items)
        assert all(c >= 5 for c in data.items.counts)
        for ex in data.valid + data.test:
            assert 0 <= ex.target_item < n
            assert all(0 <= i < n for i, _ in ex.prefix)
        assert len(data.train) == sum(len(s) - 1 for s in data.train_sessions)

    def test_behavior_order_respected(self):
        sessions = generate_synthetic("planted_rule", 200, seed=0)
        data = prepare_dataset(sessions, behaviors=["purchase", "click"], seed=0)
        assert data.behaviors.itos == ["purchase", "click"]

    def test_vocab_roundtrip(self, tmp_path):
        v = Vocab.from_counts(Counter({"b": 3, "a": 3, "c": 9}))
        assert v.itos == ["c", "a", "b"]
        v.save(tmp_path / "v.tsv")
        assert Vocab.load(tmp_path / "v.tsv") == v


class TestSynthetic:
    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            generate_synthetic("movielens", 10, seed=0)

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_sessions(generate_synthetic("planted_rule", 300, seed=7), a)
        write_sessions(generate_synthetic("planted_rule", 300, seed=7), b)
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize(
        "preset,target",
        [
            ("tmall_like", {"click": 0.903, "purchase": 0.036, "favorite": 0.061}),
            ("yoochoose_like", {"click": 0.951, "purchase": 0.049}),
        ],
    )
    def test_marginals(self, preset, target):
        sessions = generate_synthetic(preset, 9000, seed=11)
        counts = Counter(e.behavior for s in sessions for e in s.events)
        total = sum(counts.values())
        assert total >= 50_000
        for b, p in target.items():
            assert abs(counts[b] / total - p) <= 0.01

    def test_mean_lengths(self):
        for preset, mean in (("tmall_like", 6.73), ("yoochoose_like", 6.18)):
            lengths = [len(s) for s in generate_synthetic(preset, 4000, seed=5)]
            assert abs(np.mean(lengths) - mean) < 0.15

    def test_planted_rule_holds(self):
        ipc = 10
        sessions = generate_synthetic("planted_rule", 500, seed=3, items_per_category=ipc)
        for s in sessions:
            for t, e in enumerate(s.events):
                if e.behavior != "purchase":
                    continue
                run = [ev for ev in s.events[:t]]
                # the purchase follows >= 2 trailing same-category clicks and buys the first of them
                tail = []
                for ev in reversed(run):
                    if ev.behavior != "click" or int(ev.item_id[1:]) // ipc != int(run[-1].item_id[1:]) // ipc:
                        break
                    tail.append(ev)
                assert len(tail) >= 2
                assert e.item_id == tail[-1].item_id
