"""Keyword-augmented response retrieval: dual GRU encoders with graph-aware
concept rows, max-pool matching, and a tiered pool constraint at inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from kgconv.data import (RetrievalExample, ResponsePool, Utterance,
                         contains_label, keyword_node_map)
from kgconv.errors import ConfigurationError, ContractViolation, TrainingDiverged
from kgconv.graph import CkgGraph, DistanceMap
from kgconv.nn import tensor as T
from kgconv.nn.ggnn import (DEFAULT_RELATION_BUCKETS, GgnnParams, RelationBuckets,
                            add_ggnn_params, build_plan, ggnn_layer,
                            node_states_from_embeddings)
from kgconv.nn.gradcheck import value_and_grads
from kgconv.nn.layers import (GruParams, add_gru_params, gru_cell, gru_sequence,
                              masked_softmax_nll, pool)
from kgconv.nn.optim import AdamState, adam_step
from kgconv.nn.params import ParamStore
from kgconv.predictor import PredictorModel, predict_topk
from kgconv.text import EOS, KeywordVocab, Vocab

TOP_PREDICTED_KEYWORDS = 3


@dataclass(frozen=True)
class MatcherConfig:
    d: int = 200                    # GRU and GGNN hidden size
    relation_buckets: int = DEFAULT_RELATION_BUCKETS
    lambda_k: float = 0.01          # weight of the keyword match score
    use_concepts: bool = True       # ablation: drop concept rows from X and Y
    use_keywords: bool = True       # ablation: zero keyword rows and lambda_k
    seed: int = 29


@dataclass(frozen=True)
class MatchScore:
    s_u: float
    s_k: float
    s: float

    @classmethod
    def combine(cls, s_u: float, s_k: float, lambda_k: float) -> "MatchScore":
        return cls(s_u=s_u, s_k=s_k, s=s_u + lambda_k * s_k)


def flatten_context(context: Sequence[Utterance]) -> list[int]:
    """Token ids of the context utterances joined by a separator token."""
    out: list[int] = []
    for i, u in enumerate(context):
        if i:
            out.append(EOS)
        out.extend(u.tokens)
    return out


class MatcherModel:
    def __init__(self, vocab: Vocab, kv: KeywordVocab, graph: CkgGraph,
                 config: MatcherConfig = MatcherConfig(),
                 embeddings: np.ndarray | None = None):
        self.vocab = vocab
        self.kv = kv
        self.graph = graph
        self.config = config
        self.buckets = RelationBuckets(graph, config.relation_buckets)
        self.kw_to_node = keyword_node_map(kv, graph)
        self.node_word_ids = [
            [vocab.encode_token(w) for w in label.split("_")]
            for label in graph.node_labels
        ]
        d = config.d
        ps = ParamStore(seed=config.seed)
        ps.add("emb", (len(vocab), d), init="normal")
        if embeddings is not None:
            ps.set("emb", embeddings)
        add_gru_params(ps, "ctx_gru", d, d)
        add_gru_params(ps, "cand_gru", d, d)
        add_ggnn_params(ps, "ggnn", d, self.buckets.n_buckets)
        self.ps = ps
        self._plan_cache: dict[tuple[int, ...], tuple] = {}

    # ---- encoders ----

    def _ggnn_rows(self, nodes: Sequence[int], leaves) -> tuple[T.Var | None, dict[int, int]]:
        """Graph-network states for `nodes` (deduplicated); returns row lookup."""
        uniq = tuple(sorted(set(nodes)))
        if not uniq:
            return None, {}
        cached = self._plan_cache.get(uniq)
        if cached is None:
            plan = build_plan(self.graph, uniq, self.buckets)
            lookup = {n: i for i, n in enumerate(plan.out_nodes)}
            cached = (plan, lookup)
            self._plan_cache[uniq] = cached
        plan, lookup = cached
        src = node_states_from_embeddings(
            leaves["emb"], [self.node_word_ids[n] for n in plan.src_nodes]
        )
        rows = ggnn_layer(plan, src, GgnnParams(leaves, "ggnn", self.buckets.n_buckets))
        return rows, lookup

    def _encode(self, token_ids: Sequence[int], concepts: Sequence[int],
                gru_prefix: str, leaves, g_rows, g_lookup) -> T.Var | None:
        parts = []
        if token_ids:
            states, _ = gru_sequence(
                T.gather_rows(leaves["emb"], list(token_ids)),
                GruParams(leaves, gru_prefix),
            )
            parts.append(states)
        if self.config.use_concepts and concepts and g_rows is not None:
            parts.append(T.gather_rows(g_rows, [g_lookup[c] for c in concepts]))
        if not parts:
            return None
        return T.vstack(parts) if len(parts) > 1 else parts[0]

    def encode_context(self, context: Sequence[Utterance], leaves, g_rows=None,
                       g_lookup=None) -> T.Var | None:
        if not context:
            raise ContractViolation("empty context")
        concepts = [c for u in context for c in u.concepts]
        if g_rows is None:
            g_rows, g_lookup = self._ggnn_rows(concepts, leaves)
        return self._encode(flatten_context(context), concepts, "ctx_gru",
                            leaves, g_rows, g_lookup)

    def encode_candidate(self, candidate: Utterance, leaves, g_rows=None,
                         g_lookup=None) -> T.Var | None:
        if g_rows is None:
            g_rows, g_lookup = self._ggnn_rows(candidate.concepts, leaves)
        return self._encode(candidate.tokens, candidate.concepts, "cand_gru",
                            leaves, g_rows, g_lookup)

    # ---- matching ----

    def match_vars(self, X: T.Var | None, Y: T.Var | None,
                   Kx: T.Var | None, Ky: T.Var | None) -> tuple[T.Var, T.Var, T.Var]:
        """(s_u, s_k, s) as graph nodes; empty matrices pool to zero vectors."""
        d = self.config.d
        s_u = T.dot(pool(X, "max", d), pool(Y, "max", d))
        s_k = T.dot(pool(Kx, "max", d), pool(Ky, "max", d))
        lam = self.config.lambda_k if self.config.use_keywords else 0.0
        s = T.add(s_u, T.scale(s_k, lam))
        return s_u, s_k, s

    def score(self, X, Y, Kx, Ky) -> MatchScore:
        s_u, s_k, _ = self.match_vars(X, Y, Kx, Ky)
        lam = self.config.lambda_k if self.config.use_keywords else 0.0
        return MatchScore.combine(float(s_u.data), float(s_k.data), lam)

    def predicted_keyword_nodes(self, predicted: Sequence[int]) -> list[int]:
        nodes = []
        for kw in predicted:
            node = self.kw_to_node.get(kw)
            if node is not None:
                nodes.append(node)
        return nodes

    def keyword_rows(self, keywords: Sequence[int], leaves, g_rows, g_lookup
                     ) -> T.Var | None:
        if not self.config.use_keywords:
            return None
        nodes = self.predicted_keyword_nodes(keywords)
        if not nodes or g_rows is None:
            return None
        return T.gather_rows(g_rows, [g_lookup[n] for n in nodes])

    def _pooled_candidates(self, cands: Sequence[Utterance], leaves, g_rows,
                           g_lookup) -> T.Var:
        """Max-pooled candidate representations, one row per candidate.

        The candidate GRU runs once over the whole padded batch; padded
        positions are masked out of the running max. Candidates with no
        tokens and no concepts pool to the zero vector.
        """
        d = self.config.d
        B = len(cands)
        lengths = [len(c.tokens) for c in cands]
        L = max(lengths, default=0)
        neg = -1e30
        pooled = T.Var(np.full((B, d), neg))
        if L > 0:
            ids = np.zeros((B, L), dtype=np.intp)
            for j, c in enumerate(cands):
                ids[j, :len(c.tokens)] = c.tokens
            p = GruParams(leaves, "cand_gru")
            h = T.zeros((B, d))
            for t in range(L):
                h = gru_cell(T.gather_rows(leaves["emb"], ids[:, t]), h, p)
                valid = np.array([1.0 if t < n else 0.0 for n in lengths])
                masked = T.add(T.scale_rows(h, valid),
                               T.Var(((1.0 - valid) * neg)[:, None]))
                pooled = T.maximum(pooled, masked)
        if self.config.use_concepts and g_rows is not None:
            rows = []
            for c in cands:
                if c.concepts:
                    rows.append(T.max_rows(
                        T.gather_rows(g_rows, [g_lookup[n] for n in c.concepts])))
                else:
                    rows.append(T.Var(np.full(d, neg)))
            pooled = T.maximum(pooled, T.stack_rows(rows))
        nonempty = np.array([
            1.0 if (n > 0 or (self.config.use_concepts and c.concepts)) else 0.0
            for n, c in zip(lengths, cands)
        ])
        return T.scale_rows(pooled, nonempty)

    def _pooled_keywords(self, keyword_lists: Sequence[Sequence[int]], leaves,
                         g_rows, g_lookup) -> T.Var:
        """Max-pooled keyword-row representations, one row per candidate."""
        d = self.config.d
        rows = []
        for kws in keyword_lists:
            nodes = self.predicted_keyword_nodes(kws) if self.config.use_keywords else []
            if nodes and g_rows is not None:
                rows.append(T.max_rows(
                    T.gather_rows(g_rows, [g_lookup[n] for n in nodes])))
            else:
                rows.append(T.zeros((d,)))
        return T.stack_rows(rows)

    def _needed_nodes(self, context: Sequence[Utterance], cands: Sequence[Utterance],
                      predicted: Sequence[int]) -> list[int]:
        needed = set()
        if self.config.use_concepts:
            needed.update(c for u in context for c in u.concepts)
            for cand in cands:
                needed.update(cand.concepts)
        if self.config.use_keywords:
            needed.update(self.predicted_keyword_nodes(predicted))
            for cand in cands:
                needed.update(self.predicted_keyword_nodes(cand.keywords))
        return sorted(needed)

    def batch_scores(self, context: Sequence[Utterance], cands: Sequence[Utterance],
                     predicted: Sequence[int], leaves) -> tuple[T.Var, list[MatchScore]]:
        """Final-score Var vector plus per-candidate MatchScores."""
        needed = self._needed_nodes(context, cands, predicted)
        g_rows, g_lookup = self._ggnn_rows(needed, leaves)
        d = self.config.d
        X = self.encode_context(context, leaves, g_rows, g_lookup)
        x_pool = pool(X, "max", d)
        kx_pool = pool(self.keyword_rows(predicted, leaves, g_rows, g_lookup), "max", d)
        Y_pool = self._pooled_candidates(cands, leaves, g_rows, g_lookup)
        Ky_pool = self._pooled_keywords([c.keywords for c in cands], leaves,
                                        g_rows, g_lookup)
        s_u_vec = T.matmul(Y_pool, x_pool)
        s_k_vec = T.matmul(Ky_pool, kx_pool)
        lam = self.config.lambda_k if self.config.use_keywords else 0.0
        s_vec = T.add(s_u_vec, T.scale(s_k_vec, lam))
        scores = [
            MatchScore.combine(float(su), float(sk), lam)
            for su, sk in zip(s_u_vec.data, s_k_vec.data)
        ]
        return s_vec, scores

    def example_scores(self, example: RetrievalExample, predicted: Sequence[int],
                       leaves) -> tuple[T.Var, list[MatchScore]]:
        """Score Var vector over the example's candidates (gold first)."""
        return self.batch_scores(example.context, example.candidates(), predicted, leaves)

    def example_loss(self, example: RetrievalExample, predicted: Sequence[int],
                     leaves) -> T.Var:
        svec, _ = self.example_scores(example, predicted, leaves)
        loss, _ = masked_softmax_nll(
            svec, np.ones(svec.data.shape[0], dtype=bool), [0]
        )
        return loss


# ---- training ----

@dataclass
class MatcherEpoch:
    epoch: int
    train_loss: float
    valid_r1: float | None = None


@dataclass
class MatcherTrainResult:
    history: list[MatcherEpoch] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_r1: float = -1.0


def predicted_for_example(predictor: PredictorModel, example: RetrievalExample,
                          k: int = TOP_PREDICTED_KEYWORDS) -> list[int]:
    return predict_topk(predictor, example.context, predictor.graph, k=k).keywords


def rank_candidates(model: MatcherModel, example: RetrievalExample,
                    predicted: Sequence[int]) -> list[int]:
    """Candidate indices sorted by final score, ties toward lower index."""
    leaves = model.ps.leaves()
    _, scores = model.example_scores(example, predicted, leaves)
    return sorted(range(len(scores)), key=lambda i: (-scores[i].s, i))


def evaluate_r1(model: MatcherModel, examples: Sequence[RetrievalExample],
                predicted_lists: Sequence[Sequence[int]]) -> float:
    if not examples:
        return 0.0
    hits = 0
    for ex, pred in zip(examples, predicted_lists):
        if rank_candidates(model, ex, pred)[0] == 0:
            hits += 1
    return hits / len(examples)


def train(dataset: Sequence[RetrievalExample], predictor: PredictorModel,
          model: MatcherModel, optimizer: AdamState, epochs: int,
          batch_size: int = 32, valid: Sequence[RetrievalExample] | None = None,
          patience: int = 5, seed: int = 0,
          log: Callable[[str], None] | None = None) -> MatcherTrainResult:
    """20-way NLL of the gold response; the keyword predictor stays frozen
    and supplies the top-3 predicted keywords per example."""
    if not dataset:
        raise ContractViolation("empty training set")
    predicted_train = [predicted_for_example(predictor, ex) for ex in dataset]
    predicted_valid = ([predicted_for_example(predictor, ex) for ex in valid]
                       if valid is not None else None)
    rng = np.random.default_rng(seed)
    result = MatcherTrainResult()
    best_params = None
    since_best = 0
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for bstart in range(0, len(order), batch_size):
            idxs = order[bstart:bstart + batch_size]

            def batch_loss():
                leaves = model.ps.leaves()
                terms = [
                    model.example_loss(dataset[i], predicted_train[i], leaves)
                    for i in idxs
                ]
                return T.scale(T.vsum(T.stack_scalars(terms)), 1.0 / len(idxs))

            loss_val = value_and_grads(model.ps, batch_loss)
            if not math.isfinite(loss_val):
                raise TrainingDiverged("non-finite loss", batch=bstart // batch_size)
            adam_step(model.ps, optimizer)
            total += loss_val * len(idxs)
        optimizer.end_epoch()
        m = MatcherEpoch(epoch=epoch, train_loss=total / len(dataset))
        if valid is not None:
            m.valid_r1 = evaluate_r1(model, valid, predicted_valid)
            if m.valid_r1 > result.best_valid_r1:
                result.best_valid_r1 = m.valid_r1
                result.best_epoch = epoch
                best_params = model.ps.copy_params()
                since_best = 0
            else:
                since_best += 1
        result.history.append(m)
        if log:
            log(f"epoch {epoch}: loss={m.train_loss:.4f}"
                + (f" valid_r1={m.valid_r1:.4f}" if m.valid_r1 is not None else ""))
        if valid is not None and since_best >= patience:
            break
    if best_params is not None:
        model.ps.load_params(best_params)
    return result


# ---- inference over a response pool ----

TIER_SELECTED_KEYWORD = 1
TIER_CLOSER_KEYWORD = 2
TIER_TOP_SCORE = 3


@dataclass
class RespondResult:
    response: Utterance
    pool_id: int
    tier: int
    score: MatchScore
    scored: list[tuple[int, MatchScore]]   # (pool id, score), best first, truncated


def agent_respond(context: Sequence[Utterance], selected_kw: int,
                  selected_label: str, current_best_dist: float,
                  dmap: DistanceMap, pool_index: ResponsePool,
                  model: MatcherModel, predicted: Sequence[int],
                  pool_size: int = 100) -> RespondResult:
    """Choose a reply from the `pool_size` highest-scoring pool responses.

    Tier 1: contains the selected keyword. Tier 2: contains any keyword
    strictly closer to the target than the current keywords. Tier 3: the
    top-scoring response.
    """
    if len(pool_index) == 0:
        raise ConfigurationError("empty response pool")
    leaves = model.ps.leaves()
    _, match_scores = model.batch_scores(context, pool_index.responses, predicted, leaves)
    scored = list(enumerate(match_scores))
    scored.sort(key=lambda it: (-it[1].s, it[0]))
    confident = scored[:pool_size]

    def pick(pred) -> tuple[int, MatchScore] | None:
        for pid, sc in confident:
            if pred(pool_index.get(pid)):
                return pid, sc
        return None

    hit = pick(lambda r: contains_label(r.words, selected_label))
    tier = TIER_SELECTED_KEYWORD
    if hit is None:
        def closer(r: Utterance) -> bool:
            for kw in r.keywords:
                node = model.kw_to_node.get(kw)
                if node is not None and dmap.get(node) < current_best_dist:
                    return True
            return False
        hit = pick(closer)
        tier = TIER_CLOSER_KEYWORD
    if hit is None:
        hit = confident[0]
        tier = TIER_TOP_SCORE
    pid, sc = hit
    return RespondResult(response=pool_index.get(pid), pool_id=pid, tier=tier,
                         score=sc, scored=confident)
