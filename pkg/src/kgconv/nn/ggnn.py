"""One-layer gated graph network over the concept graph.

Messages are relation- and direction-specific linear maps of neighbor
states, averaged with per-node softmax coefficients over the raw edge
weights; each node then updates through a GRU cell. Evaluation runs over
the subgraph induced by the requested nodes and their 1-hop neighbors,
which yields rows identical to a full-graph pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kgconv.errors import DimensionError
from kgconv.graph import CkgGraph
from kgconv.nn import tensor as T
from kgconv.nn.layers import GruParams, add_gru_params, gru_cell
from kgconv.nn.params import ParamStore

DEFAULT_RELATION_BUCKETS = 12


class RelationBuckets:
    """Map (relation id, direction) to a transform bucket: the top-R most
    frequent relations get their own bucket, the rest share OTHER."""

    def __init__(self, graph: CkgGraph, top_r: int = DEFAULT_RELATION_BUCKETS):
        ranked = sorted(
            graph.relation_counts.items(), key=lambda kv: (-kv[1], graph.relation_labels[kv[0]])
        )
        self.rel_to_bucket = {rel: i for i, (rel, _) in enumerate(ranked[:top_r])}
        self.other = len(self.rel_to_bucket)
        self.n_rel_buckets = self.other + 1

    @property
    def n_buckets(self) -> int:
        return self.n_rel_buckets * 2

    def bucket(self, relation: int, direction: int) -> int:
        return self.rel_to_bucket.get(relation, self.other) * 2 + direction


def add_ggnn_params(ps: ParamStore, prefix: str, d: int, n_buckets: int) -> None:
    for b in range(n_buckets):
        ps.add(f"{prefix}.A{b}", (d, d))
    add_gru_params(ps, f"{prefix}.gru", d, d)


class GgnnParams:
    def __init__(self, leaves: dict[str, T.Var], prefix: str, n_buckets: int):
        self.A = [leaves[f"{prefix}.A{b}"] for b in range(n_buckets)]
        self.gru = GruParams(leaves, f"{prefix}.gru")


@dataclass
class GgnnPlan:
    """Edge bookkeeping for one subgraph pass."""
    out_nodes: list[int]                 # node ids whose new states are produced
    src_nodes: list[int]                 # out_nodes plus their 1-hop in-neighbors
    src_slot: dict[int, int]
    # per bucket: parallel arrays over that bucket's edges
    bucket_edges: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]


def build_plan(graph: CkgGraph, nodes, buckets: RelationBuckets) -> GgnnPlan:
    out_nodes = sorted(set(nodes))
    src = set(out_nodes)
    edges = []  # (bucket, src node, dst slot, alpha)
    for dst_slot, v in enumerate(out_nodes):
        incident = graph.adj[v]
        if not incident:
            continue
        raw = np.array([e.weight for e in incident], dtype=np.float64)
        alpha = np.exp(raw - raw.max())
        alpha /= alpha.sum()
        for e, a in zip(incident, alpha):
            src.add(e.neighbor)
            edges.append((buckets.bucket(e.relation, e.direction), e.neighbor, dst_slot, a))
    src_nodes = sorted(src)
    src_slot = {n: i for i, n in enumerate(src_nodes)}
    by_bucket: dict[int, tuple[list, list, list]] = {}
    for b, u, dst, a in edges:
        lists = by_bucket.setdefault(b, ([], [], []))
        lists[0].append(src_slot[u])
        lists[1].append(dst)
        lists[2].append(a)
    bucket_edges = {
        b: (np.array(s, dtype=np.intp), np.array(d, dtype=np.intp), np.array(a))
        for b, (s, d, a) in by_bucket.items()
    }
    return GgnnPlan(out_nodes, src_nodes, src_slot, bucket_edges)


def ggnn_layer(plan: GgnnPlan, src_states: T.Var, params: GgnnParams) -> T.Var:
    """One propagation step. `src_states` rows follow plan.src_nodes; the
    result rows follow plan.out_nodes."""
    n_out = len(plan.out_nodes)
    d = src_states.data.shape[1]
    if src_states.data.shape[0] != len(plan.src_nodes):
        raise DimensionError("src_states rows do not match the plan")
    message = T.zeros((n_out, d))
    for b, (src_idx, dst_idx, alpha) in sorted(plan.bucket_edges.items()):
        transformed = T.matmul(T.gather_rows(src_states, src_idx), params.A[b])
        message = T.add(message, T.segment_sum(T.scale_rows(transformed, alpha), dst_idx, n_out))
    out_idx = [plan.src_slot[n] for n in plan.out_nodes]
    h_prev = T.gather_rows(src_states, out_idx)
    return gru_cell(message, h_prev, params.gru)


def node_states_from_embeddings(emb: T.Var, node_word_ids: list[list[int]]) -> T.Var:
    """Initial node states: averaged word embeddings of each node's words."""
    flat: list[int] = []
    seg: list[int] = []
    inv_counts = []
    for i, ids in enumerate(node_word_ids):
        flat.extend(ids)
        seg.extend([i] * len(ids))
        inv_counts.append(1.0 / max(len(ids), 1))
    summed = T.segment_sum(T.gather_rows(emb, flat), seg, len(node_word_ids))
    return T.scale_rows(summed, np.array(inv_counts))


def ggnn_full(graph: CkgGraph, node_embed: T.Var, params: GgnnParams,
              buckets: RelationBuckets) -> T.Var:
    """Spec-shaped full-graph pass: N x d in, N x d out."""
    if node_embed.data.shape[0] != graph.n_nodes:
        raise DimensionError("node_embed rows must equal the node count")
    plan = build_plan(graph, range(graph.n_nodes), buckets)
    # src_nodes == all nodes here, in sorted (= id) order
    return ggnn_layer(plan, node_embed, params)
