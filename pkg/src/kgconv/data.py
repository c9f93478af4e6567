"""Conversation ingestion, truncation/filtering rules, and example generation
for keyword prediction and response retrieval."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from kgconv.errors import ConfigurationError, ParseError
from kgconv.graph import CkgGraph, extract_concepts
from kgconv.text import (KeywordVocab, PosLexicon, TfIdfStats, Vocab,
                         extract_keywords, tokenize)

MAX_UTTERANCE_TOKENS = 30
MAX_KEYWORDS = 10
MAX_CONTEXT_UTTERANCES = 8
N_RETRIEVAL_CANDIDATES = 20


@dataclass(frozen=True)
class Utterance:
    words: tuple[str, ...]          # surface tokens after truncation
    tokens: tuple[int, ...]         # vocab ids, same length as words
    keywords: tuple[int, ...]       # keyword-vocab ids, capped at 10
    concepts: tuple[int, ...]       # graph node ids in utterance order


@dataclass(frozen=True)
class Conversation:
    utterances: tuple[Utterance, ...]
    split: str = "train"


@dataclass(frozen=True)
class PredictionExample:
    context: tuple[Utterance, ...]    # the (up to) two most recent utterances
    context_keywords: tuple[tuple[int, ...], tuple[int, ...]]
    candidate_mask: tuple[int, ...]   # keyword-vocab ids, sorted
    gold: tuple[int, ...]             # nonempty subset of candidate_mask

    def all_context_keywords(self) -> set[int]:
        return set(self.context_keywords[0]) | set(self.context_keywords[1])


@dataclass(frozen=True)
class RetrievalExample:
    context: tuple[Utterance, ...]    # up to 8 most recent utterances
    gold: Utterance
    negatives: tuple[Utterance, ...]  # 19 sampled responses

    def candidates(self) -> list[Utterance]:
        return [self.gold, *self.negatives]


class Preprocessor:
    """Bundles the text tooling needed to turn raw text into Utterances."""

    def __init__(self, vocab: Vocab, kv: KeywordVocab, stats: TfIdfStats,
                 pos: PosLexicon, stopwords: frozenset[str], graph: CkgGraph):
        self.vocab = vocab
        self.kv = kv
        self.stats = stats
        self.pos = pos
        self.stopwords = stopwords
        self.graph = graph

    def utterance(self, text: str) -> Utterance:
        words = tokenize(text)[:MAX_UTTERANCE_TOKENS]
        return Utterance(
            words=tuple(words),
            tokens=tuple(self.vocab.encode(words)),
            keywords=tuple(extract_keywords(words, self.pos, self.stats, self.kv,
                                            self.stopwords, cap=MAX_KEYWORDS)),
            concepts=tuple(extract_concepts(words, self.graph)),
        )


def read_conversation_records(path) -> list[list[str]]:
    """One JSON object per line: {"utterances": ["...", ...]}."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                utts = rec["utterances"]
            except (json.JSONDecodeError, TypeError, KeyError) as e:
                raise ParseError(f"bad conversation record: {e}", lineno) from None
            if not isinstance(utts, list) or not all(isinstance(u, str) for u in utts):
                raise ParseError("utterances must be a list of strings", lineno)
            out.append(utts)
    return out


def ingest(records: Iterable[Sequence[str]], prep: Preprocessor,
           split: str = "train") -> list[Conversation]:
    """Tokenize, truncate, and annotate; conversations under 2 utterances drop."""
    convs = []
    for i, rec in enumerate(records):
        if not isinstance(rec, (list, tuple)):
            raise ParseError(f"record {i}: expected a list of utterance strings")
        utts = tuple(prep.utterance(text) for text in rec)
        if len(utts) < 2:
            continue
        convs.append(Conversation(utterances=utts, split=split))
    return convs


def contains_label(words: Sequence[str], label: str) -> bool:
    """True iff the label's underscore-split words occur as a contiguous run."""
    parts = label.split("_")
    n = len(parts)
    return any(list(words[i:i + n]) == parts for i in range(len(words) - n + 1))


def keyword_node_map(kv: KeywordVocab, graph: CkgGraph) -> dict[int, int]:
    """keyword-vocab id -> graph node id, for keywords that are node labels."""
    out = {}
    for kw_id in range(len(kv)):
        node = graph.node_id(kv.token(kw_id))
        if node is not None:
            out[kw_id] = node
    return out


def node_keyword_map(kv: KeywordVocab, graph: CkgGraph) -> dict[int, int]:
    return {node: kw for kw, node in keyword_node_map(kv, graph).items()}


def candidate_mask_for(context_keywords: Iterable[int], graph: CkgGraph,
                       kw_to_node: dict[int, int],
                       node_to_kw: dict[int, int]) -> tuple[int, ...]:
    """1-hop CKG neighbors of the context keywords that are themselves
    keywords, minus the context keywords (no self-loops)."""
    context = set(context_keywords)
    mask: set[int] = set()
    for kw in context:
        node = kw_to_node.get(kw)
        if node is None:
            continue
        for nbr in graph.neighbors(node):
            nbr_kw = node_to_kw.get(nbr)
            if nbr_kw is not None:
                mask.add(nbr_kw)
    return tuple(sorted(mask - context))


@dataclass
class PredictionDataset:
    examples: list[PredictionExample]
    dropped_empty_gold: int = 0
    dropped_empty_mask: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_empty_gold + self.dropped_empty_mask


def make_prediction_examples(convs: Sequence[Conversation], graph: CkgGraph,
                             kv: KeywordVocab) -> PredictionDataset:
    """Neighborhood-filtered next-turn keyword examples from each adjacent
    utterance window; examples with no in-neighborhood gold are dropped."""
    kw_to_node = keyword_node_map(kv, graph)
    node_to_kw = {n: k for k, n in kw_to_node.items()}
    ds = PredictionDataset(examples=[])
    for conv in convs:
        utts = conv.utterances
        for n in range(1, len(utts) - 1):
            prev_u, cur_u, next_u = utts[n - 1], utts[n], utts[n + 1]
            mask = candidate_mask_for(
                set(prev_u.keywords) | set(cur_u.keywords), graph, kw_to_node, node_to_kw
            )
            if not mask:
                ds.dropped_empty_mask += 1
                continue
            gold = tuple(sorted(set(next_u.keywords) & set(mask)))
            if not gold:
                ds.dropped_empty_gold += 1
                continue
            ds.examples.append(PredictionExample(
                context=(prev_u, cur_u),
                context_keywords=(prev_u.keywords, cur_u.keywords),
                candidate_mask=mask,
                gold=gold,
            ))
    return ds


def make_retrieval_examples(convs: Sequence[Conversation], seed: int,
                            n_candidates: int = N_RETRIEVAL_CANDIDATES,
                            context_cap: int = MAX_CONTEXT_UTTERANCES
                            ) -> list[RetrievalExample]:
    """Gold = the actual next utterance; negatives are sampled uniformly
    without replacement from other conversations' responses."""
    rng = np.random.default_rng(seed)
    all_responses: list[tuple[int, Utterance]] = [
        (ci, u) for ci, conv in enumerate(convs) for u in conv.utterances[1:]
    ]
    n_neg = n_candidates - 1
    out = []
    for ci, conv in enumerate(convs):
        n_other = sum(1 for cj, _ in all_responses if cj != ci)
        if n_other < n_neg:
            raise ConfigurationError(
                f"corpus too small: need {n_neg} negative responses, have {n_other}"
            )
        utts = conv.utterances
        for n in range(len(utts) - 1):
            gold = utts[n + 1]
            context = utts[max(0, n + 1 - context_cap): n + 1]
            # uniform without replacement over other conversations' responses,
            # never duplicating the gold text
            negatives: list[Utterance] = []
            taken: set[int] = set()
            attempts = 0
            while len(negatives) < n_neg:
                attempts += 1
                if attempts > 1000 * n_neg:
                    raise ConfigurationError(
                        "could not sample enough distinct negative responses"
                    )
                j = int(rng.integers(len(all_responses)))
                if j in taken:
                    continue
                cj, cand = all_responses[j]
                if cj == ci or cand.tokens == gold.tokens:
                    continue
                taken.add(j)
                negatives.append(cand)
            out.append(RetrievalExample(
                context=tuple(context), gold=gold, negatives=tuple(negatives)
            ))
    return out


@dataclass
class ResponsePool:
    """Deduplicated utterances addressable by id."""
    responses: list[Utterance] = field(default_factory=list)
    _seen: dict[tuple[int, ...], int] = field(default_factory=dict)

    def add(self, u: Utterance) -> int:
        idx = self._seen.get(u.tokens)
        if idx is None:
            idx = len(self.responses)
            self._seen[u.tokens] = idx
            self.responses.append(u)
        return idx

    def __len__(self) -> int:
        return len(self.responses)

    def get(self, idx: int) -> Utterance:
        return self.responses[idx]


def build_response_pool(convs: Sequence[Conversation]) -> ResponsePool:
    pool = ResponsePool()
    for conv in convs:
        for u in conv.utterances:
            pool.add(u)
    return pool


def utterance_to_json(u: Utterance) -> dict:
    return {
        "words": list(u.words),
        "tokens": list(u.tokens),
        "keywords": list(u.keywords),
        "concepts": list(u.concepts),
    }


def utterance_from_json(d: dict) -> Utterance:
    return Utterance(
        words=tuple(d["words"]),
        tokens=tuple(d["tokens"]),
        keywords=tuple(d["keywords"]),
        concepts=tuple(d["concepts"]),
    )


def save_conversations(path, convs: Sequence[Conversation]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, conv in enumerate(convs):
            f.write(json.dumps({
                "id": i,
                "split": conv.split,
                "utterances": [utterance_to_json(u) for u in conv.utterances],
            }, sort_keys=True) + "\n")


def load_conversations(path) -> list[Conversation]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(Conversation(
                utterances=tuple(utterance_from_json(u) for u in d["utterances"]),
                split=d.get("split", "train"),
            ))
    return out
