"""Self-play between the target-driving agent and a passive base retriever;
measures success rate and agent turns to reach the target."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from kgconv.data import (MAX_CONTEXT_UTTERANCES, ResponsePool, Utterance,
                         candidate_mask_for, contains_label, keyword_node_map,
                         utterance_to_json)
from kgconv.errors import ContractViolation, KgconvError
from kgconv.graph import CkgGraph, DistanceCache
from kgconv.matcher import MatcherModel, RespondResult, agent_respond
from kgconv.predictor import PredictorModel, PredictorOutput
from kgconv.strategy import (StrategyConfig, TransitionDecision,
                             ckg_distance_fn, embedding_distance_fn,
                             select_keyword)
from kgconv.text import KeywordVocab


@dataclass(frozen=True)
class SimulationConfig:
    max_agent_turns: int = 8
    pool_size: int = 100
    n_dialogues: int = 1000
    seed: int = 0


@dataclass
class SimulationResult:
    target: str
    success: bool
    agent_turns_used: int | None
    transcript: list[tuple[str, Utterance]]
    keyword_trace: list[TransitionDecision]
    distance_trace: list[float]
    aborted: bool = False
    abort_reason: str | None = None
    seed: int | None = None

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "success": self.success,
            "agent_turns_used": self.agent_turns_used,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "seed": self.seed,
            "transcript": [
                {"speaker": sp, **utterance_to_json(u)} for sp, u in self.transcript
            ],
            "keyword_trace": [d.to_json() for d in self.keyword_trace],
            "distance_trace": [
                None if math.isinf(d) else d for d in self.distance_trace
            ],
        }


def success_check(utterance: Utterance, target_label: str) -> bool:
    """Exact surface mention of the target; multi-word targets must appear
    as a contiguous token run. No stemming, no synonyms."""
    return contains_label(utterance.words, target_label)


class KeywordPolicy:
    """Produces masked next-keyword distributions from the dialogue history."""

    def distribution(self, history: Sequence[Utterance]) -> PredictorOutput | None:
        raise NotImplementedError


class NeuralKeywordPolicy(KeywordPolicy):
    def __init__(self, predictor: PredictorModel):
        self.predictor = predictor

    def distribution(self, history):
        utts = list(history[-2:])
        k_cur = utts[-1].keywords
        k_prev = utts[-2].keywords if len(utts) >= 2 else ()
        example = self.predictor.example_for_context(utts, k_prev, k_cur)
        if example is None:
            return None
        return self.predictor.forward(example)


class OracleKeywordPolicy(KeywordPolicy):
    """Uniform distribution over the CKG neighborhood mask; lets tests drive
    pure strategy behavior without a trained model."""

    def __init__(self, graph: CkgGraph, kv: KeywordVocab):
        self.graph = graph
        self.kv = kv
        self.kw_to_node = keyword_node_map(kv, graph)
        self.node_to_kw = {n: k for k, n in self.kw_to_node.items()}

    def distribution(self, history):
        utts = list(history[-2:])
        context = {k for u in utts for k in u.keywords}
        mask = candidate_mask_for(context, self.graph, self.kw_to_node, self.node_to_kw)
        if not mask:
            return None
        p = 1.0 / len(mask)
        return PredictorOutput(probabilities={k: p for k in mask}, mask=mask)


def current_keywords(history: Sequence[Utterance]) -> tuple[int, ...]:
    """Keywords of the most recent utterance that has any."""
    for u in reversed(history):
        if u.keywords:
            return u.keywords
    return ()


@dataclass
class AgentTurn:
    utterance: Utterance
    decision: TransitionDecision | None
    respond: RespondResult | None


class Agent:
    """Full pipeline: keyword policy -> transition strategy -> tiered retrieval."""

    def __init__(self, policy: KeywordPolicy, matcher: MatcherModel,
                 pool: ResponsePool, graph: CkgGraph, kv: KeywordVocab,
                 dcache: DistanceCache | None = None,
                 strategy: StrategyConfig = StrategyConfig(),
                 pool_size: int = 100, topk: int = 3):
        self.policy = policy
        self.matcher = matcher
        self.pool = pool
        self.graph = graph
        self.kv = kv
        self.dcache = dcache or DistanceCache(graph)
        self.strategy = strategy
        self.pool_size = pool_size
        self.topk = topk
        self.kw_to_node = keyword_node_map(kv, graph)

    def act(self, history: Sequence[Utterance], target_label: str) -> AgentTurn:
        target_node = self.graph.node_id(target_label)
        if target_node is None:
            raise ContractViolation(f"target {target_label!r} is not a graph node")
        dmap = self.dcache.for_target(target_node)
        context = list(history[-MAX_CONTEXT_UTTERANCES:])
        output = self.policy.distribution(history)
        current = current_keywords(history)
        if output is None or not current:
            # nothing to steer with: fall back to the best-scoring response
            res = agent_respond(context, -1, "", math.inf, dmap, self.pool,
                                self.matcher, [], pool_size=self.pool_size)
            return AgentTurn(res.response, None, res)
        if self.strategy.mode == "embedding":
            dist_fn = embedding_distance_fn(
                self.matcher.ps.params["emb"], self.kw_to_node,
                self.matcher.node_word_ids, target_node,
            )
        else:
            dist_fn = ckg_distance_fn(dmap, self.kw_to_node)
        target_kw = self.kv.kw_id(target_label)
        decision = select_keyword(output, current, target_kw if target_kw is not None else -1,
                                  dist_fn, self.strategy)
        predicted = [kw for kw, _ in output.top_k(self.topk)]
        res = agent_respond(
            context, decision.chosen, self.kv.token(decision.chosen),
            decision.current_best_dist, dmap, self.pool, self.matcher,
            predicted, pool_size=self.pool_size,
        )
        return AgentTurn(res.response, decision, res)


class BaseUser:
    """Passive retrieval user: ranks its pool by the utterance score only."""

    def __init__(self, matcher: MatcherModel, pool: ResponsePool):
        self.matcher = matcher
        self.pool = pool

    def reply(self, history: Sequence[Utterance]) -> Utterance:
        context = list(history[-MAX_CONTEXT_UTTERANCES:])
        leaves = self.matcher.ps.leaves()
        _, scores = self.matcher.batch_scores(context, self.pool.responses, [], leaves)
        best = min(range(len(scores)), key=lambda pid: (-scores[pid].s_u, pid))
        return self.pool.get(best)


class EchoUser:
    """Test double: answers by repeating the last utterance's keywords."""

    def __init__(self, make_utterance, kv: KeywordVocab):
        self.make_utterance = make_utterance  # text -> Utterance
        self.kv = kv

    def reply(self, history: Sequence[Utterance]) -> Utterance:
        kws = current_keywords(history)
        words = " ".join(self.kv.token(k).replace("_", " ") for k in kws) or "go on"
        return self.make_utterance(f"tell me more about {words}")


def run_dialogue(agent: Agent, user, start: Utterance, target_label: str,
                 config: SimulationConfig, seed: int | None = None) -> SimulationResult:
    """Alternating turns starting with the agent; stops at the first utterance
    that mentions the target or when the agent turn budget is exhausted."""
    if success_check(start, target_label):
        raise ContractViolation("start utterance already mentions the target")
    result = SimulationResult(
        target=target_label, success=False, agent_turns_used=None,
        transcript=[("user", start)], keyword_trace=[], distance_trace=[],
        seed=seed,
    )
    history: list[Utterance] = [start]
    try:
        for turn in range(1, config.max_agent_turns + 1):
            agent_turn = agent.act(history, target_label)
            history.append(agent_turn.utterance)
            result.transcript.append(("agent", agent_turn.utterance))
            if agent_turn.decision is not None:
                result.keyword_trace.append(agent_turn.decision)
                result.distance_trace.append(agent_turn.decision.dist_to_target)
            if success_check(agent_turn.utterance, target_label):
                result.success = True
                result.agent_turns_used = turn
                break
            reply = user.reply(history)
            history.append(reply)
            result.transcript.append(("user", reply))
            if success_check(reply, target_label):
                result.success = True
                result.agent_turns_used = turn
                break
    except KgconvError as e:
        result.aborted = True
        result.abort_reason = str(e)
    return result


@dataclass
class SelfPlayAggregate:
    n_dialogues: int
    n_aborted: int
    success_rate: float
    mean_turns: float | None
    results: list[SimulationResult] = field(default_factory=list)

    def summary_row(self) -> dict:
        return {
            "Succ.": round(100.0 * self.success_rate, 2),
            "#Turns": None if self.mean_turns is None else round(self.mean_turns, 2),
            "n": self.n_dialogues,
            "aborted": self.n_aborted,
        }


def reachable_keyword_labels(graph: CkgGraph, kv: KeywordVocab,
                             dcache: DistanceCache, start: Utterance) -> list[str]:
    """Keyword labels reachable on the CKG from the start utterance's keywords."""
    kw_to_node = keyword_node_map(kv, graph)
    nodes = [kw_to_node[k] for k in start.keywords if k in kw_to_node]
    if not nodes:
        return []
    dmap = dcache.for_target(nodes[0])
    labels = []
    for kw, node in kw_to_node.items():
        if node in dmap.dist and not contains_label(start.words, kv.token(kw)):
            labels.append(kv.token(kw))
    return sorted(labels)


def run_selfplay(agent: Agent, user, starts: Sequence[Utterance],
                 config: SimulationConfig) -> SelfPlayAggregate:
    """Seeded start/target sampling; #Turns averages successful dialogues only."""
    rng = np.random.default_rng(config.seed)
    dcache = agent.dcache
    results = []
    for i in range(config.n_dialogues):
        start = None
        target = None
        for _ in range(100):
            cand = starts[int(rng.integers(len(starts)))]
            labels = reachable_keyword_labels(agent.graph, agent.kv, dcache, cand)
            if not labels:
                continue
            pick = labels[int(rng.integers(len(labels)))]
            if not success_check(cand, pick):
                start, target = cand, pick
                break
        if start is None:
            continue
        results.append(run_dialogue(agent, user, start, target, config, seed=config.seed + i))
    live = [r for r in results if not r.aborted]
    succ = [r for r in live if r.success]
    return SelfPlayAggregate(
        n_dialogues=len(live),
        n_aborted=len(results) - len(live),
        success_rate=(len(succ) / len(live)) if live else 0.0,
        mean_turns=(sum(r.agent_turns_used for r in succ) / len(succ)) if succ else None,
        results=results,
    )
