import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgconv.errors import ConfigurationError, ContractViolation, ParseError
from kgconv.graph import (CkgGraph, CkgTriplet, DistanceCache, distance_from_target,
                          extract_concepts, filter_triplets, load_graph,
                          load_snapshot, parse_triplet_lines, save_snapshot,
                          shortest_path)
from conftest import SimpleVocabs
from oracles import brute_force_distances, floyd_warshall, random_weighted_graph

SV = SimpleVocabs(
    words=["having", "lunch", "food", "a", "b", "music"],
    keywords=["food", "music", "a", "b"],
)


def graph_of(trips):
    return CkgGraph(list(trips))


def chain_abc():
    # a-b weight 2, b-c weight 4
    return graph_of([CkgTriplet("a", "r", "b", 2.0), CkgTriplet("b", "r", "c", 4.0)])


class TestLoadFilter:
    def test_multiword_triplet_kept(self):
        kept = filter_triplets(
            [CkgTriplet("having_lunch", "HasPrerequisite", "food", 2.83)],
            SV.vocab, SV.kv)
        assert len(kept) == 1

    def test_low_weight_dropped(self):
        kept = filter_triplets([CkgTriplet("a", "RelatedTo", "b", 0.5)], SV.vocab, SV.kv)
        assert kept == []

    def test_self_loop_dropped(self):
        kept = filter_triplets([CkgTriplet("music", "RelatedTo", "music", 3.0)],
                               SV.vocab, SV.kv)
        assert kept == []

    def test_vocab_rule(self):
        # neither side is a keyword -> dropped
        sv = SimpleVocabs(words=["x", "y"], keywords=["z"])
        assert filter_triplets([CkgTriplet("x", "r", "y", 2.0)], sv.vocab, sv.kv) == []
        # keyword head but tail word out of vocab -> dropped
        sv2 = SimpleVocabs(words=["x"], keywords=["x"])
        assert filter_triplets([CkgTriplet("x", "r", "zz", 2.0)], sv2.vocab, sv2.kv) == []

    def test_duplicates_collapse_to_max_weight(self):
        kept = filter_triplets(
            [CkgTriplet("a", "r", "b", 2.0), CkgTriplet("a", "r", "b", 5.0)],
            SV.vocab, SV.kv)
        assert len(kept) == 1 and kept[0].weight == 5.0

    def test_parse_error_carries_line_number(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_triplet_lines(["a\tr\tb\t2.0", "bad line"])

    def test_empty_graph_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            load_graph([CkgTriplet("a", "r", "b", 0.2)], SV.vocab, SV.kv)

    def test_filter_soundness_on_loaded_graph(self):
        trips = [
            CkgTriplet("having_lunch", "HasPrerequisite", "food", 2.83),
            CkgTriplet("a", "r", "b", 1.5),
            CkgTriplet("music", "r", "music", 3.0),
            CkgTriplet("a", "r", "b", 0.4),
        ]
        g = load_graph(trips, SV.vocab, SV.kv)
        for t in g.triplets:
            assert t.weight >= 1.0
            assert t.head != t.tail
            head_kw = SV.kv.contains_token(t.head)
            tail_kw = SV.kv.contains_token(t.tail)
            cover = lambda lab: all(SV.vocab.contains(w) for w in lab.split("_"))
            assert (head_kw and cover(t.tail)) or (tail_kw and cover(t.head))


class TestNeighbors:
    def test_single_edge_symmetrized(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0)])
        assert g.neighbors(g.label_index["a"]) == {g.label_index["b"]}
        assert g.neighbors(g.label_index["b"]) == {g.label_index["a"]}

    def test_both_directions_count(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0), CkgTriplet("c", "r", "a", 1.0)])
        a = g.label_index["a"]
        assert g.neighbors(a) == {g.label_index["b"], g.label_index["c"]}

    def test_unknown_node_raises(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0)])
        with pytest.raises(ContractViolation):
            g.neighbors(99)


class TestExtractConcepts:
    def test_longest_match_multiword(self):
        g = graph_of([CkgTriplet("having_lunch", "r", "food", 2.0)])
        ids = extract_concepts(["i", "love", "having", "lunch"], g)
        assert [g.node_labels[i] for i in ids] == ["having_lunch"]

    def test_longest_match_beats_single(self):
        g = graph_of([
            CkgTriplet("having_lunch", "r", "food", 2.0),
            CkgTriplet("lunch", "r", "food", 2.0),
        ])
        ids = extract_concepts(["having", "lunch"], g)
        assert [g.node_labels[i] for i in ids] == ["having_lunch"]

    def test_no_match(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0)])
        assert extract_concepts(["x", "y"], g) == []

    def test_duplicates_kept_in_order(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0)])
        ids = extract_concepts(["a", "x", "b", "a"], g)
        assert [g.node_labels[i] for i in ids] == ["a", "b", "a"]


class TestDistances:
    def test_chain_distances(self):
        g = chain_abc()
        dm = distance_from_target(g, g.label_index["c"])
        assert dm.get(g.label_index["c"]) == 0.0
        assert dm.get(g.label_index["b"]) == 0.25
        assert dm.get(g.label_index["a"]) == 0.75

    def test_parallel_paths_prefer_heavy_edges(self):
        # direct a-c weight 1 (length 1) loses to a-b-c with weights 10,10 (0.2)
        g = graph_of([
            CkgTriplet("a", "r", "c", 1.0),
            CkgTriplet("a", "r", "b", 10.0),
            CkgTriplet("b", "r", "c", 10.0),
        ])
        dm = distance_from_target(g, g.label_index["c"])
        assert dm.get(g.label_index["a"]) == pytest.approx(0.2, abs=1e-12)
        assert shortest_path(g, g.label_index["a"], g.label_index["c"]) == [
            g.label_index["a"], g.label_index["b"], g.label_index["c"]]

    def test_unreachable_absent(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0), CkgTriplet("c", "r", "d", 2.0)])
        dm = distance_from_target(g, g.label_index["a"])
        assert g.label_index["c"] not in dm.dist
        assert math.isinf(dm.get(g.label_index["c"]))

    def test_triangle_inequality(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            trips, _ = random_weighted_graph(rng)
            if not trips:
                continue
            g = graph_of(trips)
            dm = distance_from_target(g, 0)
            for v in range(g.n_nodes):
                for e in g.adj[v]:
                    if v in dm.dist and e.neighbor in dm.dist:
                        assert dm.dist[v] <= dm.dist[e.neighbor] + 1.0 / e.weight + 1e-12

    def test_matches_brute_force_and_floyd_warshall(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            trips, _ = random_weighted_graph(rng)
            if not trips:
                continue
            g = graph_of(trips)
            target = int(rng.integers(g.n_nodes))
            dm = distance_from_target(g, target)
            brute = brute_force_distances(g, target)
            assert dm.dist == brute
            fw = floyd_warshall(g)
            for v in range(g.n_nodes):
                if v in dm.dist:
                    assert abs(dm.dist[v] - fw[target][v]) < 1e-12
                else:
                    assert math.isinf(fw[target][v])

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            trips, _ = random_weighted_graph(rng)
            if not trips:
                continue
            g = graph_of(trips)
            a, b = int(rng.integers(g.n_nodes)), int(rng.integers(g.n_nodes))
            assert distance_from_target(g, a).get(b) == pytest.approx(
                distance_from_target(g, b).get(a), abs=1e-12)

    def test_monotonicity_adding_edge(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            trips, labels = random_weighted_graph(rng)
            if len(trips) < 2 or len(labels) < 3:
                continue
            g = graph_of(trips)
            extra = CkgTriplet(labels[0], "rel", labels[-1], 5.0)
            if extra.head == extra.tail:
                continue
            g2 = graph_of(trips + [extra])
            before = distance_from_target(g, 0)
            after = distance_from_target(g2, 0)
            for v in range(g.n_nodes):
                assert after.get(v) <= before.get(v) + 1e-12


class TestShortestPath:
    def test_self_path(self):
        g = chain_abc()
        a = g.label_index["a"]
        assert shortest_path(g, a, a) == [a]

    def test_chain_path(self):
        g = chain_abc()
        ids = [g.label_index[x] for x in "abc"]
        assert shortest_path(g, ids[0], ids[2]) == ids

    def test_unreachable_none(self):
        g = graph_of([CkgTriplet("a", "r", "b", 2.0), CkgTriplet("c", "r", "d", 2.0)])
        assert shortest_path(g, g.label_index["a"], g.label_index["c"]) is None

    def test_path_length_consistent_with_distance(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            trips, _ = random_weighted_graph(rng)
            if not trips:
                continue
            g = graph_of(trips)
            s, t = int(rng.integers(g.n_nodes)), int(rng.integers(g.n_nodes))
            path = shortest_path(g, s, t)
            dm = distance_from_target(g, t)
            if path is None:
                assert s not in dm.dist
                continue
            length = 0.0
            for u, v in zip(path, path[1:]):
                length += 1.0 / max(e.weight for e in g.adj[u] if e.neighbor == v)
            assert length == pytest.approx(dm.get(s), abs=1e-12)

    def test_deterministic_tie_break(self):
        # two equal-length two-hop routes: via b (id order first) wins
        trips = [
            CkgTriplet("a", "r", "b", 2.0), CkgTriplet("b", "r", "d", 2.0),
            CkgTriplet("a", "r", "c", 2.0), CkgTriplet("c", "r", "d", 2.0),
        ]
        g = graph_of(trips)
        path = shortest_path(g, g.label_index["a"], g.label_index["d"])
        assert path == [g.label_index["a"], g.label_index["b"], g.label_index["d"]]


class TestSnapshot:
    def test_roundtrip_and_stale_detection(self, tmp_path):
        trips = [CkgTriplet("a", "r", "b", 1.5), CkgTriplet("music", "r", "b", 2.0)]
        g = load_graph(trips, SV.vocab, SV.kv)
        p = tmp_path / "graph.tsv"
        save_snapshot(p, g, SV.vocab.sha256(), SV.kv.sha256())
        g2 = load_snapshot(p, SV.vocab.sha256(), SV.kv.sha256())
        assert g2.node_labels == g.node_labels
        assert g2.n_edges == g.n_edges
        with pytest.raises(ConfigurationError, match="stale"):
            load_snapshot(p, "0" * 64, SV.kv.sha256())


class TestDistanceCache:
    def test_cache_returns_same_map(self):
        g = chain_abc()
        cache = DistanceCache(g)
        assert cache.for_target(0) is cache.for_target(0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_distance_oracle_property(seed):
    rng = np.random.default_rng(seed)
    trips, _ = random_weighted_graph(rng)
    if not trips:
        return
    g = CkgGraph(trips)
    target = int(rng.integers(g.n_nodes))
    assert distance_from_target(g, target).dist == brute_force_distances(g, target)
