"""Tiny randomized worlds for end-to-end gradient checks (toy dims, short
texts, graphs of at most 8 nodes)."""

from __future__ import annotations

import numpy as np

from kgconv.data import (Preprocessor, PredictionExample, RetrievalExample,
                         candidate_mask_for, keyword_node_map,
                         make_prediction_examples)
from kgconv.graph import CkgTriplet, load_graph
from kgconv.text import PosLexicon, build_keyword_vocab, build_vocab, tokenize

LABELS = ["kast", "lorn", "mird", "nuv", "oxel", "prin"]
PADS = ["zo", "fi", "ru"]


def make_toy_setup(seed: int):
    """Random small graph over 6 keyword labels plus a filler pad vocab."""
    rng = np.random.default_rng(seed)
    texts = []
    for _ in range(30):
        n = int(rng.integers(2, 4))
        words = []
        for _ in range(n):
            pool = LABELS if rng.random() < 0.6 else PADS
            words.append(pool[int(rng.integers(len(pool)))])
        texts.append(" ".join(words))
    tokenized = [tokenize(t) for t in texts]
    vocab, stats = build_vocab(tokenized)
    counts: dict[str, int] = {}
    for toks in tokenized:
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
    pos = PosLexicon({lab: "noun" for lab in LABELS})
    kv = build_keyword_vocab(vocab, counts, stats, pos, frozenset(), min_count=1)
    trips = []
    while len(trips) < 8:
        a, b = rng.integers(len(LABELS)), rng.integers(len(LABELS))
        if a == b:
            continue
        trips.append(CkgTriplet(LABELS[int(a)], f"r{int(rng.integers(2))}",
                                LABELS[int(b)], float(rng.uniform(1, 5))))
    graph = load_graph(trips, vocab, kv)
    prep = Preprocessor(vocab, kv, stats, pos, frozenset(), graph)
    utterances = [prep.utterance(t) for t in texts]
    return prep, graph, kv, utterances


def make_toy_prediction_example(seed: int) -> tuple:
    """(prep, graph, kv, example) with a nonempty mask and gold inside it."""
    for salt in range(50):
        prep, graph, kv, utts = make_toy_setup(seed + 1000 * salt)
        kw_to_node = keyword_node_map(kv, graph)
        node_to_kw = {n: k for k, n in kw_to_node.items()}
        rng = np.random.default_rng(seed + salt)
        for _ in range(100):
            a, b = utts[int(rng.integers(len(utts)))], utts[int(rng.integers(len(utts)))]
            ctx_kws = set(a.keywords) | set(b.keywords)
            mask = candidate_mask_for(ctx_kws, graph, kw_to_node, node_to_kw)
            if len(mask) >= 2:
                gold = (mask[int(rng.integers(len(mask)))],)
                ex = PredictionExample(context=(a, b),
                                       context_keywords=(a.keywords, b.keywords),
                                       candidate_mask=mask, gold=gold)
                return prep, graph, kv, ex
    raise AssertionError("could not build a toy prediction example")


def make_toy_retrieval_example(seed: int, n_candidates: int = 20) -> tuple:
    prep, graph, kv, utts = make_toy_setup(seed)
    rng = np.random.default_rng(seed + 7)
    order = rng.permutation(len(utts))
    gold = utts[int(order[0])]
    negatives = tuple(utts[int(i)] for i in order[1:n_candidates])
    context = tuple(utts[int(i)] for i in order[n_candidates:n_candidates + 1])
    ex = RetrievalExample(context=context, gold=gold, negatives=negatives)
    predicted = list((context[-1].keywords + gold.keywords)[:3])
    return prep, graph, kv, ex, predicted
