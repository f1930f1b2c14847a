from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgcnet.graph import GlobalGraph, build_global_graph, graph_arrays
from mgcnet.sessions import DatasetError

BEH = ["click", "buy"]
C, B = 0, 1


def brute_force(sessions):
    """Double loop over every index pair of every session."""
    out = Counter()
    for seq in sessions:
        for i in range(len(seq)):
            for j in range(i + 1, len(seq)):
                if j == i + 1 or seq[i][1] == seq[j][1]:
                    out[(seq[i][0], (seq[i][1], seq[j][1]), seq[j][0])] += 1
    return out


def as_counter(graph):
    return Counter({(s, rel, d): w for s, rel, d, w in graph.edge_list()})


def random_sessions(rng, n, n_items=15, n_beh=2, max_len=9):
    return [
        [(int(rng.integers(n_items)), int(rng.integers(n_beh))) for _ in range(int(rng.integers(2, max_len + 1)))]
        for _ in range(n)
    ]


class TestBuild:
    def test_click_click_buy(self):
        g = build_global_graph([[(1, C), (2, C), (3, B)]], 4, BEH, neighbor_cap=0)
        assert g.edge_list() == [(1, (C, C), 2, 1), (2, (C, B), 3, 1)]

    def test_long_distance_same_behavior(self):
        g = build_global_graph([[(1, C), (2, B), (3, C)]], 4, BEH, neighbor_cap=0)
        assert as_counter(g) == Counter({(1, (C, B), 2): 1, (2, (B, C), 3): 1, (1, (C, C), 3): 1})

    def test_duplicate_session_doubles_weights(self):
        seq = [(1, C), (2, B), (3, C), (1, C)]
        once = build_global_graph([seq], 4, BEH, neighbor_cap=0)
        twice = build_global_graph([seq, seq], 4, BEH, neighbor_cap=0)
        assert as_counter(twice) == Counter({k: 2 * w for k, w in as_counter(once).items()})

    def test_empty_training_set(self):
        with pytest.raises(DatasetError):
            build_global_graph([], 3, BEH)

    def test_out_of_range_item(self):
        with pytest.raises(DatasetError):
            build_global_graph([[(0, C), (5, C)]], 3, BEH)

    def test_oracle_200_sessions(self):
        sessions = random_sessions(np.random.default_rng(0), 200, n_beh=3)
        g = build_global_graph(sessions, 15, ["click", "buy", "fav"], neighbor_cap=0)
        assert as_counter(g) == brute_force(sessions)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 10_000))
    def test_total_weight_formula(self, n, seed):
        sessions = random_sessions(np.random.default_rng(seed), n)
        g = build_global_graph(sessions, 15, BEH, neighbor_cap=0)
        expected = sum(
            (len(s) - 1) + sum(1 for i in range(len(s)) for j in range(i + 2, len(s)) if s[i][1] == s[j][1])
            for s in sessions
        )
        assert g.total_weight() == expected
        assert all(isinstance(w, int) and w >= 1 for *_, w in g.edge_list())

    def test_cap_keeps_heaviest_then_smallest_index(self):
        # item 0 receives click2click from 1 (x3), 2 (x1), 3 (x1), 4 (x2)
        sessions = [[(1, C), (0, C)]] * 3 + [[(2, C), (0, C)], [(3, C), (0, C)]] + [[(4, C), (0, C)]] * 2
        g = build_global_graph(sessions, 5, BEH, neighbor_cap=3)
        assert g.neighbor_query(0, "click2click") == [(1, 3), (4, 2), (2, 1)]

    def test_relations_cover_cross_product(self):
        g = build_global_graph([[(0, C), (1, C)]], 2, ["click", "buy", "fav"])
        assert len(g.relations) == 9
        assert g.relation_name((1, 2)) == "buy2fav"


class TestNeighborQuery:
    def setup_method(self):
        self.g = build_global_graph([[(1, C), (2, B), (3, C)]], 5, BEH, neighbor_cap=0)

    def test_isolated_item(self):
        assert self.g.neighbor_query(4, "click2click") == []

    def test_inbound_sources(self):
        assert self.g.neighbor_query(3, "click2click") == [(1, 1)]
        assert self.g.neighbor_query(3, (B, C)) == [(2, 1)]

    def test_relation_without_edges(self):
        assert self.g.neighbor_query(2, "buy2buy") == []

    def test_order_by_weight_then_index(self):
        g = build_global_graph([[(3, C), (0, C)], [(1, C), (0, C)], [(2, C), (0, C)], [(2, C), (0, C)]], 4, BEH, 0)
        assert g.neighbor_query(0, "click2click") == [(2, 2), (1, 1), (3, 1)]


class TestSerialization:
    def test_roundtrip_and_determinism(self, tmp_path):
        sessions = random_sessions(np.random.default_rng(3), 50)
        g = build_global_graph(sessions, 15, BEH)
        g.save(tmp_path / "g.tsv")
        h = GlobalGraph.load(tmp_path / "g.tsv")
        assert h.edge_list() == g.edge_list() and h.behaviors == BEH and h.n_items == 15
        assert build_global_graph(sessions, 15, BEH).to_tsv() == g.to_tsv()

    def test_missing_header(self):
        with pytest.raises(DatasetError):
            GlobalGraph.from_tsv("0\tclick2click\t1\t1\n")


class TestDenseView:
    def test_blocks_match_queries(self):
        sessions = random_sessions(np.random.default_rng(4), 30)
        g = build_global_graph(sessions, 15, BEH, neighbor_cap=4)
        ga = graph_arrays(g)
        for rel, block in zip(g.relations, ga.blocks):
            for row, t in enumerate(block.targets):
                got = list(zip(block.neighbors[row][block.mask[row]], block.weights[row][block.mask[row]]))
                assert got == [(j, float(w)) for j, w in g.neighbor_query(int(t), rel)]
        for i in range(15):
            expected = sorted({j for rel in g.relations for j, _ in g.neighbor_query(i, rel)})
            assert list(ga.union_neighbors[i][ga.union_mask[i]]) == expected
            assert ga.has_union[i] == bool(expected)
