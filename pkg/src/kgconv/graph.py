"""Commonsense knowledge graph: filtered loading, neighborhood queries,
concept string-matching, and reciprocal-weight shortest paths."""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from kgconv.errors import ConfigurationError, ContractViolation, ParseError

# Direction flags for stored half-edges (message-passing keeps direction,
# neighborhood/distance queries ignore it).
FWD = 0
BWD = 1

MAX_CONCEPT_WORDS = 4
MIN_EDGE_WEIGHT = 1.0

SNAPSHOT_MAGIC = "#KGCONV-GRAPH v1"


@dataclass(frozen=True)
class CkgTriplet:
    head: str
    relation: str
    tail: str
    weight: float


@dataclass(frozen=True)
class Edge:
    """Half-edge stored on the receiving node's adjacency list."""
    neighbor: int
    relation: int
    weight: float
    direction: int  # FWD if the original triplet points at the owner node


@dataclass
class DistanceMap:
    """Reciprocal-weight shortest-path lengths to `target`; absent = unreachable."""
    target: int
    dist: dict[int, float]

    def get(self, node: int) -> float:
        return self.dist.get(node, math.inf)


class CkgGraph:
    def __init__(self, triplets: Sequence[CkgTriplet]):
        self.node_labels: list[str] = []
        self.label_index: dict[str, int] = {}
        self.relation_labels: list[str] = []
        self._relation_index: dict[str, int] = {}
        self.relation_counts: dict[int, int] = {}
        self.adj: list[list[Edge]] = []
        self.triplets: list[CkgTriplet] = list(triplets)
        for t in self.triplets:
            h = self._node(t.head)
            ta = self._node(t.tail)
            r = self._relation(t.relation)
            self.adj[ta].append(Edge(h, r, t.weight, FWD))
            self.adj[h].append(Edge(ta, r, t.weight, BWD))
            self.relation_counts[r] = self.relation_counts.get(r, 0) + 1

    def _node(self, label: str) -> int:
        idx = self.label_index.get(label)
        if idx is None:
            idx = len(self.node_labels)
            self.label_index[label] = idx
            self.node_labels.append(label)
            self.adj.append([])
        return idx

    def _relation(self, label: str) -> int:
        idx = self._relation_index.get(label)
        if idx is None:
            idx = len(self.relation_labels)
            self._relation_index[label] = idx
            self.relation_labels.append(label)
        return idx

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def n_edges(self) -> int:
        return len(self.triplets)

    def _check_node(self, node: int) -> None:
        if not (0 <= node < self.n_nodes):
            raise ContractViolation(f"node id {node} out of range [0, {self.n_nodes})")

    def neighbors(self, node: int) -> set[int]:
        """All nodes adjacent via any edge in either direction, excluding `node`."""
        self._check_node(node)
        return {e.neighbor for e in self.adj[node] if e.neighbor != node}

    def node_id(self, label: str) -> int | None:
        return self.label_index.get(label)


def parse_triplet_lines(lines: Iterable[str]) -> list[CkgTriplet]:
    """`head<TAB>relation<TAB>tail<TAB>weight` records; `#` lines are comments."""
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
        head, relation, tail, weight_s = parts
        try:
            weight = float(weight_s)
        except ValueError:
            raise ParseError(f"bad weight {weight_s!r}", lineno) from None
        if not (head and relation and tail):
            raise ParseError("empty field", lineno)
        out.append(CkgTriplet(head, relation, tail, weight))
    return out


def _vocab_covers(label: str, word_vocab) -> bool:
    return all(word_vocab.contains(w) for w in label.split("_"))


def filter_triplets(triplets: Iterable[CkgTriplet], word_vocab, keyword_vocab) -> list[CkgTriplet]:
    """Keep triplets that pass all three admission rules, drop self-loops,
    and collapse duplicate (head, relation, tail) records to the max weight."""
    best: dict[tuple[str, str, str], CkgTriplet] = {}
    order: list[tuple[str, str, str]] = []
    for t in triplets:
        if t.weight < MIN_EDGE_WEIGHT:
            continue
        if t.head == t.tail:
            continue
        head_kw = keyword_vocab.contains_token(t.head)
        tail_kw = keyword_vocab.contains_token(t.tail)
        ok = (head_kw and _vocab_covers(t.tail, word_vocab)) or (
            tail_kw and _vocab_covers(t.head, word_vocab)
        )
        if not ok:
            continue
        key = (t.head, t.relation, t.tail)
        prev = best.get(key)
        if prev is None:
            best[key] = t
            order.append(key)
        elif t.weight > prev.weight:
            best[key] = t
    return [best[k] for k in order]


def load_graph(source, word_vocab, keyword_vocab) -> CkgGraph:
    """Build the filtered graph from triplet lines, a path, or parsed triplets."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as f:
            triplets = parse_triplet_lines(f)
    elif source and isinstance(next(iter(source), None), CkgTriplet):
        triplets = list(source)
    else:
        triplets = parse_triplet_lines(source)
    kept = filter_triplets(triplets, word_vocab, keyword_vocab)
    if not kept:
        raise ConfigurationError("no triplets survived filtering; graph would be empty")
    return CkgGraph(kept)


def extract_concepts(tokens: Sequence[str], graph: CkgGraph) -> list[int]:
    """Greedy longest-match scan: longest underscore-joined window (up to 4
    tokens) that is a node label wins; matched spans do not overlap."""
    out: list[int] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = False
        for width in range(min(MAX_CONCEPT_WORDS, n - i), 0, -1):
            label = "_".join(tokens[i:i + width])
            idx = graph.label_index.get(label)
            if idx is not None:
                out.append(idx)
                i += width
                matched = True
                break
        if not matched:
            i += 1
    return out


def distance_from_target(graph: CkgGraph, target: int) -> DistanceMap:
    """Single-source shortest paths over edge lengths 1/weight, both
    directions traversable. Exact; ties resolved by smaller node id."""
    graph._check_node(target)
    dist: dict[int, float] = {}
    heap: list[tuple[float, int]] = [(0.0, target)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u] = d
        for e in graph.adj[u]:
            v = e.neighbor
            if v not in dist:
                heapq.heappush(heap, (d + 1.0 / e.weight, v))
    return DistanceMap(target=target, dist=dist)


def shortest_path(graph: CkgGraph, source: int, target: int) -> list[int] | None:
    """One minimum path under reciprocal weights, or None if unreachable.
    Equal-length alternatives break ties toward the smaller predecessor id."""
    graph._check_node(source)
    graph._check_node(target)
    dist: dict[int, float] = {source: 0.0}
    pred: dict[int, int | None] = {source: None}
    done: set[int] = set()
    heap: list[tuple[float, int]] = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        for e in graph.adj[u]:
            v = e.neighbor
            if v in done:
                continue
            nd = d + 1.0 / e.weight
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and pred[v] is not None and u < pred[v]:
                pred[v] = u
    if target not in done:
        return None
    path = [target]
    while pred[path[-1]] is not None:
        path.append(pred[path[-1]])
    return path[::-1]


class DistanceCache:
    """Per-target DistanceMap cache over an immutable graph."""

    def __init__(self, graph: CkgGraph):
        self.graph = graph
        self._maps: dict[int, DistanceMap] = {}

    def for_target(self, target: int) -> DistanceMap:
        dm = self._maps.get(target)
        if dm is None:
            dm = distance_from_target(self.graph, target)
            self._maps[target] = dm
        return dm


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_snapshot(path, graph: CkgGraph, word_vocab_hash: str, keyword_vocab_hash: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(SNAPSHOT_MAGIC + "\n")
        f.write(f"#word_vocab_sha256={word_vocab_hash}\n")
        f.write(f"#keyword_vocab_sha256={keyword_vocab_hash}\n")
        f.write(f"#nodes={graph.n_nodes} edges={graph.n_edges}\n")
        for t in graph.triplets:
            f.write(f"{t.head}\t{t.relation}\t{t.tail}\t{t.weight!r}\n")


def load_snapshot(path, word_vocab_hash: str, keyword_vocab_hash: str) -> CkgGraph:
    """Reload a persisted graph; refuses snapshots built from other vocabularies."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise ParseError(f"not a graph snapshot: {path}")
    header = {}
    for line in lines[1:]:
        if not line.startswith("#"):
            break
        if "=" in line:
            k, v = line[1:].split("=", 1)
            header[k] = v.split(" ")[0]
    if header.get("word_vocab_sha256") != word_vocab_hash:
        raise ConfigurationError("graph snapshot is stale: word vocabulary changed")
    if header.get("keyword_vocab_sha256") != keyword_vocab_hash:
        raise ConfigurationError("graph snapshot is stale: keyword vocabulary changed")
    triplets = parse_triplet_lines(lines[1:])
    if not triplets:
        raise ConfigurationError("empty graph snapshot")
    return CkgGraph(triplets)
