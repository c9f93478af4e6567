"""Turn-level ranking metrics: R@k, P@1, MRR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from kgconv.errors import ContractViolation


@dataclass(frozen=True)
class RankedPrediction:
    ranking: Sequence[int]   # item ids, best first, no duplicates
    gold: frozenset[int] | set[int]

    def __post_init__(self):
        if len(set(self.ranking)) != len(self.ranking):
            raise ContractViolation("ranking contains duplicates")
        if not self.gold:
            raise ContractViolation("gold set is empty")


def recall_at_k(pred: RankedPrediction, k: int) -> float:
    """|gold ∩ top-k| / |gold|."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    top = set(pred.ranking[:k])
    return len(top & set(pred.gold)) / len(pred.gold)


def precision_at_1(pred: RankedPrediction) -> float:
    if not pred.ranking:
        raise ContractViolation("empty ranking")
    return 1.0 if pred.ranking[0] in pred.gold else 0.0


def mrr(pred: RankedPrediction) -> float:
    """Reciprocal rank of the (singleton) gold item."""
    if len(pred.gold) != 1:
        raise ContractViolation("mrr needs a singleton gold")
    gold = next(iter(pred.gold))
    for i, item in enumerate(pred.ranking, start=1):
        if item == gold:
            return 1.0 / i
    raise ContractViolation("gold item absent from ranking")


def mean_over(preds: Iterable[RankedPrediction], metric, *args) -> float:
    values = [metric(p, *args) for p in preds]
    if not values:
        raise ContractViolation("no predictions to average")
    return sum(values) / len(values)
