"""Next-keyword selection: prefer the most probable predicted keyword that
moves strictly closer to the target under reciprocal-weight path lengths,
relaxing to ties and finally to the plain argmax when nothing qualifies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from kgconv.errors import ContractViolation
from kgconv.graph import DistanceMap
from kgconv.predictor import PredictorOutput

STRICT = "strict"
RELAXED_EQ = "relaxed_eq"
FALLBACK_ARGMAX = "fallback_argmax"


@dataclass(frozen=True)
class StrategyConfig:
    force_target_when_adjacent: bool = False
    # "ckg" orders candidates by graph distance; "embedding" is the ablation
    # that orders by cosine distance in the shared embedding space.
    mode: str = "ckg"


@dataclass(frozen=True)
class TransitionDecision:
    chosen: int                 # keyword-vocab id
    probability: float
    dist_to_target: float
    current_best_dist: float
    relaxation_level: str

    def to_json(self) -> dict:
        def enc(x: float):
            return None if math.isinf(x) else x
        return {
            "chosen": self.chosen,
            "probability": self.probability,
            "dist_to_target": enc(self.dist_to_target),
            "current_best_dist": enc(self.current_best_dist),
            "relaxation_level": self.relaxation_level,
        }


def embedding_distance_fn(emb: np.ndarray, kw_to_node: dict[int, int],
                          node_word_ids: list[list[int]], target_node: int
                          ) -> Callable[[int], float]:
    """Ablation ordering: cosine distance between node embedding averages."""
    def node_vec(node: int) -> np.ndarray:
        return emb[node_word_ids[node]].mean(axis=0)

    tv = node_vec(target_node)
    tn = np.linalg.norm(tv)

    def dist(kw: int) -> float:
        node = kw_to_node.get(kw)
        if node is None:
            return math.inf
        v = node_vec(node)
        denom = np.linalg.norm(v) * tn
        if denom == 0:
            return math.inf
        return 1.0 - float(v @ tv) / float(denom)

    return dist


def ckg_distance_fn(dmap: DistanceMap, kw_to_node: dict[int, int]) -> Callable[[int], float]:
    def dist(kw: int) -> float:
        node = kw_to_node.get(kw)
        if node is None:
            return math.inf
        return dmap.get(node)
    return dist


def select_keyword(output: PredictorOutput, current: Sequence[int], target_kw: int,
                   dist_fn: Callable[[int], float],
                   config: StrategyConfig = StrategyConfig()) -> TransitionDecision:
    """Pick the next keyword from the masked distribution.

    Strict candidates move strictly closer to the target than the best of
    the current keywords; the relaxation ladder is strict -> ties allowed
    -> plain argmax. Probability ties break toward the smaller keyword id.
    """
    if not output.probabilities:
        raise ContractViolation("empty distribution support")
    if not current:
        raise ContractViolation("no current keywords to compare against")
    current_best = min(dist_fn(k) for k in current)
    items = sorted(output.probabilities.items())  # by keyword id, for tie-breaks

    def argmax(pool):
        best = None
        for kw, p in pool:
            if best is None or p > best[1]:
                best = (kw, p)
        return best

    dists = {kw: dist_fn(kw) for kw, _ in items}
    if config.force_target_when_adjacent and target_kw in dists and \
            dists[target_kw] < current_best:
        return TransitionDecision(target_kw, output.probabilities[target_kw],
                                  dists[target_kw], current_best, STRICT)
    strict_pool = [(kw, p) for kw, p in items if dists[kw] < current_best]
    if strict_pool:
        kw, p = argmax(strict_pool)
        return TransitionDecision(kw, p, dists[kw], current_best, STRICT)
    relaxed_pool = [(kw, p) for kw, p in items
                    if dists[kw] <= current_best and math.isfinite(dists[kw])]
    if relaxed_pool:
        kw, p = argmax(relaxed_pool)
        return TransitionDecision(kw, p, dists[kw], current_best, RELAXED_EQ)
    kw, p = argmax(items)
    return TransitionDecision(kw, p, dists[kw], current_best, FALLBACK_ARGMAX)
