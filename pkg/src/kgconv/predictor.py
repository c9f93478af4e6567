"""Graph-aware next-turn keyword prediction, plus a PMI reference predictor.

The neural model encodes the two most recent utterances with a hierarchical
GRU, reads keyword/concept node states out of a one-layer gated graph
network, combines them by hierarchical pooling, and classifies over the
keyword vocabulary restricted to the 1-hop neighborhood of the context
keywords.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from kgconv.data import (Conversation, PredictionExample, candidate_mask_for,
                         keyword_node_map)
from kgconv.errors import ContractViolation, TrainingDiverged
from kgconv.graph import CkgGraph
from kgconv.metrics import RankedPrediction, recall_at_k
from kgconv.nn import tensor as T
from kgconv.nn.ggnn import (DEFAULT_RELATION_BUCKETS, GgnnParams, RelationBuckets,
                            add_ggnn_params, build_plan, ggnn_layer,
                            node_states_from_embeddings)
from kgconv.nn.gradcheck import value_and_grads
from kgconv.nn.layers import (GruParams, add_gru_params, hierarchical_gru,
                              masked_softmax_nll, pool)
from kgconv.nn.optim import AdamState, adam_step
from kgconv.nn.params import ParamStore
from kgconv.text import BOS, EOS, KeywordVocab, Vocab


@dataclass(frozen=True)
class PredictorConfig:
    d1: int = 200                  # HGRU hidden size
    d2: int = 200                  # GGNN hidden size; equals the embedding width
    relation_buckets: int = DEFAULT_RELATION_BUCKETS
    use_concepts: bool = True      # ablation hook: False zeroes the concept vector
    seed: int = 13


@dataclass
class PredictorOutput:
    """Masked next-turn keyword distribution (keyword-vocab ids)."""
    probabilities: dict[int, float]
    mask: tuple[int, ...]

    def validate(self, context_keywords: set[int]) -> None:
        if set(self.probabilities) - set(self.mask):
            raise ContractViolation("probability mass outside the candidate mask")
        if set(self.mask) & context_keywords:
            raise ContractViolation("candidate mask contains context keywords")
        total = sum(self.probabilities.values())
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ContractViolation(f"masked probabilities sum to {total}")

    def top_k(self, k: int) -> list[tuple[int, float]]:
        ranked = sorted(self.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:k]


@dataclass
class TopkResult:
    keywords: list[int]
    probabilities: list[float]
    truncated: bool   # fewer candidates than requested


class PredictorModel:
    def __init__(self, vocab: Vocab, kv: KeywordVocab, graph: CkgGraph,
                 config: PredictorConfig = PredictorConfig(),
                 embeddings: np.ndarray | None = None):
        self.vocab = vocab
        self.kv = kv
        self.graph = graph
        self.config = config
        self.buckets = RelationBuckets(graph, config.relation_buckets)
        self.kw_to_node = keyword_node_map(kv, graph)
        self.node_to_kw = {n: k for k, n in self.kw_to_node.items()}
        self.node_word_ids = [
            [vocab.encode_token(w) for w in label.split("_")]
            for label in graph.node_labels
        ]
        d1, d2 = config.d1, config.d2
        ps = ParamStore(seed=config.seed)
        ps.add("emb", (len(vocab), d2), init="normal")
        if embeddings is not None:
            ps.set("emb", embeddings)
        add_gru_params(ps, "hgru.word", d2, d1)
        add_gru_params(ps, "hgru.utt", d1, d1)
        add_ggnn_params(ps, "ggnn", d2, self.buckets.n_buckets)
        ps.add("out.W", (d1 + d2, len(kv)))
        ps.add("out.b", (len(kv),), init="zeros")
        self.ps = ps
        self._plan_cache: dict[tuple[int, ...], tuple] = {}

    # ---- forward ----

    def _leaves(self):
        return self.ps.leaves()

    def logits(self, example: PredictionExample, leaves: dict[str, T.Var]) -> T.Var:
        cfg = self.config
        emb = leaves["emb"]
        x = hierarchical_gru(
            emb, [u.tokens for u in example.context],
            GruParams(leaves, "hgru.word"), GruParams(leaves, "hgru.utt"), BOS, EOS,
        )
        kw_nodes = sorted({
            self.kw_to_node[k]
            for k in example.all_context_keywords() if k in self.kw_to_node
        })
        concept_nodes = [c for u in example.context for c in u.concepts]
        needed = tuple(sorted(set(kw_nodes) | set(concept_nodes)))
        rows_of: dict[int, int] = {}
        g_rows: T.Var | None = None
        if needed:
            cached = self._plan_cache.get(needed)
            if cached is None:
                plan = build_plan(self.graph, needed, self.buckets)
                cached = (plan, {n: i for i, n in enumerate(plan.out_nodes)})
                self._plan_cache[needed] = cached
            plan, rows_of = cached
            src = node_states_from_embeddings(
                emb, [self.node_word_ids[n] for n in plan.src_nodes]
            )
            g_rows = ggnn_layer(plan, src, GgnnParams(leaves, "ggnn", self.buckets.n_buckets))
        k_mat = T.gather_rows(g_rows, [rows_of[n] for n in kw_nodes]) if kw_nodes else None
        c_mat = (T.gather_rows(g_rows, [rows_of[n] for n in concept_nodes])
                 if concept_nodes else None)
        k = pool(k_mat, "mean", cfg.d2)
        c = pool(c_mat, "mean", cfg.d2) if cfg.use_concepts else T.zeros((cfg.d2,))
        kc = T.maximum(k, c)
        feat = T.concat([x, kc])
        return T.add(T.matmul(feat, leaves["out.W"]), leaves["out.b"])

    def loss(self, example: PredictionExample, leaves: dict[str, T.Var]
             ) -> tuple[T.Var, np.ndarray]:
        logits = self.logits(example, leaves)
        mask = np.zeros(len(self.kv), dtype=bool)
        mask[list(example.candidate_mask)] = True
        return masked_softmax_nll(logits, mask, list(example.gold))

    def forward(self, example: PredictionExample) -> PredictorOutput:
        if not example.candidate_mask:
            raise ContractViolation("empty candidate mask")
        leaves = self._leaves()
        logits = self.logits(example, leaves)
        mask = np.zeros(len(self.kv), dtype=bool)
        mask[list(example.candidate_mask)] = True
        _, probs = masked_softmax_nll(logits, mask, [example.candidate_mask[0]])
        out = PredictorOutput(
            probabilities={int(i): float(probs[i]) for i in example.candidate_mask},
            mask=example.candidate_mask,
        )
        out.validate(example.all_context_keywords())
        return out

    def example_for_context(self, context: Sequence, k_prev: Sequence[int],
                            k_cur: Sequence[int]) -> PredictionExample | None:
        """Build an inference-time example from the two most recent utterances."""
        mask = candidate_mask_for(
            set(k_prev) | set(k_cur), self.graph, self.kw_to_node, self.node_to_kw
        )
        if not mask:
            return None
        ctx = tuple(context[-2:])
        return PredictionExample(
            context=ctx, context_keywords=(tuple(k_prev), tuple(k_cur)),
            candidate_mask=mask, gold=(mask[0],),  # gold unused at inference
        )


def predict_topk(model: PredictorModel, context: Sequence, graph: CkgGraph,
                 k: int = 3) -> TopkResult:
    """Top-k keywords for the given utterance window, ties by keyword id."""
    utts = list(context)
    k_cur = utts[-1].keywords
    k_prev = utts[-2].keywords if len(utts) >= 2 else ()
    example = model.example_for_context(utts, k_prev, k_cur)
    if example is None:
        return TopkResult(keywords=[], probabilities=[], truncated=True)
    out = model.forward(example)
    ranked = out.top_k(k)
    return TopkResult(
        keywords=[kw for kw, _ in ranked],
        probabilities=[p for _, p in ranked],
        truncated=len(out.mask) < k,
    )


# ---- training ----

@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    valid_r1: float | None = None


@dataclass
class TrainResult:
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_r1: float = -1.0


def _r1(model: PredictorModel, examples: Sequence[PredictionExample]) -> float:
    if not examples:
        return 0.0
    total = 0.0
    for ex in examples:
        out = model.forward(ex)
        ranked = [kw for kw, _ in out.top_k(len(out.mask))]
        total += recall_at_k(RankedPrediction(ranked, set(ex.gold)), 1)
    return total / len(examples)


def evaluate_r1(model: PredictorModel, examples: Sequence[PredictionExample]) -> float:
    return _r1(model, examples)


def train(dataset: Sequence[PredictionExample], model: PredictorModel,
          optimizer: AdamState, epochs: int, batch_size: int = 32,
          valid: Sequence[PredictionExample] | None = None,
          patience: int = 5, seed: int = 0,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Minimize the summed NLL of all gold next-turn keywords with Adam;
    keeps the best-validation parameters when a validation set is given."""
    if not dataset:
        raise ContractViolation("empty training set")
    rng = np.random.default_rng(seed)
    result = TrainResult()
    best_params = None
    since_best = 0
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        total_loss = 0.0
        for bstart in range(0, len(order), batch_size):
            batch = [dataset[i] for i in order[bstart:bstart + batch_size]]

            def batch_loss():
                leaves = model.ps.leaves()
                terms = [model.loss(ex, leaves)[0] for ex in batch]
                return T.scale(T.vsum(T.stack_scalars(terms)), 1.0 / len(batch))

            loss_val = value_and_grads(model.ps, batch_loss)
            if not math.isfinite(loss_val):
                raise TrainingDiverged("non-finite loss", batch=bstart // batch_size)
            adam_step(model.ps, optimizer)
            total_loss += loss_val * len(batch)
        optimizer.end_epoch()
        metrics = EpochMetrics(epoch=epoch, train_loss=total_loss / len(dataset))
        if valid is not None:
            metrics.valid_r1 = _r1(model, valid)
            if metrics.valid_r1 > result.best_valid_r1:
                result.best_valid_r1 = metrics.valid_r1
                result.best_epoch = epoch
                best_params = model.ps.copy_params()
                since_best = 0
            else:
                since_best += 1
        result.history.append(metrics)
        if log:
            log(f"epoch {epoch}: loss={metrics.train_loss:.4f}"
                + (f" valid_r1={metrics.valid_r1:.4f}" if metrics.valid_r1 is not None else ""))
        if valid is not None and since_best >= patience:
            break
    if best_params is not None:
        model.ps.load_params(best_params)
    return result


# ---- PMI reference predictor ----

@dataclass
class PmiTable:
    counts: dict[tuple[int, int], int]
    src_counts: dict[int, int]
    tgt_counts: dict[int, int]
    total: int
    alpha: float = 1.0

    def pmi(self, a: int, b: int) -> float:
        c = self.counts.get((a, b), 0)
        return math.log(
            (c + self.alpha) * max(self.total, 1)
            / ((self.src_counts.get(a, 0) + self.alpha)
               * (self.tgt_counts.get(b, 0) + self.alpha))
        )


def pmi_fit(convs: Sequence[Conversation]) -> PmiTable:
    """Adjacent-turn keyword transition counts over the corpus."""
    counts: Counter[tuple[int, int]] = Counter()
    src: Counter[int] = Counter()
    tgt: Counter[int] = Counter()
    total = 0
    for conv in convs:
        for u, v in zip(conv.utterances, conv.utterances[1:]):
            for a in u.keywords:
                for b in v.keywords:
                    counts[(a, b)] += 1
                    src[a] += 1
                    tgt[b] += 1
                    total += 1
    return PmiTable(dict(counts), dict(src), dict(tgt), total)


def pmi_predict(table: PmiTable, context_keywords: Sequence[int],
                mask: Sequence[int]) -> PredictorOutput:
    """Mean PMI from the context keywords, softmax-normalized over the mask."""
    if not mask:
        raise ContractViolation("empty candidate mask")
    context = sorted(set(context_keywords))
    scores = np.array([
        (np.mean([table.pmi(a, b) for a in context]) if context else 0.0)
        for b in mask
    ])
    scores -= scores.max()
    probs = np.exp(scores)
    probs /= probs.sum()
    out = PredictorOutput(
        probabilities={int(b): float(p) for b, p in zip(mask, probs)},
        mask=tuple(mask),
    )
    out.validate(set(context_keywords))
    return out
