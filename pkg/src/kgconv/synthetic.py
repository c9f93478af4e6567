"""Deterministic synthetic world: a 30-node concept graph with planted
keyword transitions, plus generated conversations for overfit and
self-play checks.

Each conversation walks a keyword ring with an escape hatch to a hub
keyword; whether a turn steps the ring or jumps to the hub is announced
by "mode" words that are graph concepts but not keywords, so the concept
channel carries the disambiguating signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kgconv.data import (Conversation, Preprocessor, ResponsePool,
                         build_response_pool, ingest)
from kgconv.graph import CkgGraph, CkgTriplet, load_graph
from kgconv.text import (PosLexicon, TfIdfStats, Vocab, build_keyword_vocab,
                         build_vocab, tokenize)

TOPICS = [
    "amber", "birch", "cedar", "delta", "ember", "fjord", "grove", "heron",
    "iris", "jade", "krill", "lotus", "maple", "nectar", "onyx", "pearl",
    "quartz", "raven", "sable", "tulip",
]
HUB = "lotus"                        # reachable from every topic
MODES = ["brisk", "mellow"]          # announce ring-step vs hub-jump transitions
BRISK_P = 0.3                        # per-utterance chance of the brisk mode
FILLERS = ["stone", "cloud", "river", "meadow", "dune", "glade", "reef"]
MULTIWORD = "night_sky"

PAD_WORDS = [
    "the", "a", "and", "near", "under", "by", "with", "feels", "seems",
    "quite", "rather", "today", "again", "still", "very", "walk", "path",
    "light", "shade", "wind", "slow", "turn", "left", "right", "soft",
]


def synthetic_triplets() -> list[CkgTriplet]:
    trips = []
    n = len(TOPICS)
    for i in range(n):
        trips.append(CkgTriplet(TOPICS[i], "NextTo", TOPICS[(i + 1) % n], 2.0))
        trips.append(CkgTriplet(TOPICS[i], "SkipTo", TOPICS[(i + 2) % n], 1.4))
        if TOPICS[i] != HUB:
            trips.append(CkgTriplet(TOPICS[i], "JumpTo", HUB, 1.5))
    # modes and fillers hang off keyword nodes so they pass the admission rules
    for j, mode in enumerate(MODES):
        for i in range(j, n, 4):
            trips.append(CkgTriplet(mode, "RelatedTo", TOPICS[i], 1.2))
    for j, filler in enumerate(FILLERS):
        trips.append(CkgTriplet(filler, "RelatedTo", TOPICS[(3 * j) % n], 1.1))
    trips.append(CkgTriplet(MULTIWORD, "RelatedTo", TOPICS[5], 1.3))
    return trips


def synthetic_pos_lexicon() -> PosLexicon:
    table = {t: "noun" for t in TOPICS}
    for w in MODES + FILLERS + PAD_WORDS + ["night", "sky", "tell", "me", "more",
                                            "about", "now", "i", "think", "us",
                                            "talk", "let", "go", "on"]:
        table.setdefault(w, "other")
    return PosLexicon(table)


def _utterance_text(rng: np.random.Generator, topic: str, mode: str) -> str:
    def pad(k: int) -> list[str]:
        return [PAD_WORDS[int(rng.integers(len(PAD_WORDS)))] for _ in range(k)]

    # the mode word hides at a random offset inside generous filler, which
    # keeps the token channel noisy while concept extraction stays exact
    words = pad(int(rng.integers(3, 7))) + [topic] + pad(int(rng.integers(2, 5)))
    words += [mode] + pad(int(rng.integers(2, 5)))
    roll = rng.random()
    if roll < 0.25:
        words += [FILLERS[int(rng.integers(len(FILLERS)))]]
    elif roll < 0.35:
        words += MULTIWORD.split("_")
    return " ".join(words)


def next_topic(topic: int, prev_topic: int, prev_mode: str, cur_mode: str) -> int:
    """Planted transition rule: a brisk mention in either context utterance
    steps along the ring; otherwise the conversation jumps to the hub.
    When the hub is already in context, skip two ring positions instead,
    so the next keyword never collides with a context keyword."""
    n = len(TOPICS)
    if "brisk" in (prev_mode, cur_mode):
        return (topic + 1) % n
    hub = TOPICS.index(HUB)
    if hub not in (topic, prev_topic):
        return hub
    return (topic + 2) % n


def generate_conversations(n_convs: int, conv_len: int, seed: int) -> list[list[str]]:
    """Raw conversation texts following the planted transition rule."""
    rng = np.random.default_rng(seed)
    n = len(TOPICS)
    convs = []
    for _ in range(n_convs):
        topic = int(rng.integers(n))
        prev_topic = topic
        prev_mode = "mellow"
        texts = []
        for _ in range(conv_len):
            cur_mode = "brisk" if rng.random() < BRISK_P else "mellow"
            texts.append(_utterance_text(rng, TOPICS[topic], cur_mode))
            topic, prev_topic = next_topic(topic, prev_topic, prev_mode, cur_mode), topic
            prev_mode = cur_mode
        convs.append(texts)
    return convs


@dataclass
class SyntheticWorld:
    vocab: Vocab
    stats: TfIdfStats
    kv: object
    graph: CkgGraph
    prep: Preprocessor
    train: list[Conversation]
    valid: list[Conversation]
    test: list[Conversation]
    pool: ResponsePool


def build_world(n_train: int = 50, n_valid: int = 10, n_test: int = 15,
                conv_len: int = 8, seed: int = 7) -> SyntheticWorld:
    raw_train = generate_conversations(n_train, conv_len, seed)
    raw_valid = generate_conversations(n_valid, conv_len, seed + 1)
    raw_test = generate_conversations(n_test, conv_len, seed + 2)
    tokenized = [tokenize(t) for conv in raw_train for t in conv]
    vocab, stats = build_vocab(tokenized)
    counts: dict[str, int] = {}
    for toks in tokenized:
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
    pos = synthetic_pos_lexicon()
    stopwords = frozenset()
    kv = build_keyword_vocab(vocab, counts, stats, pos, stopwords, min_count=1)
    graph = load_graph(synthetic_triplets(), vocab, kv)
    prep = Preprocessor(vocab, kv, stats, pos, stopwords, graph)
    train = ingest(raw_train, prep, "train")
    valid = ingest(raw_valid, prep, "valid")
    test = ingest(raw_test, prep, "test")
    return SyntheticWorld(vocab=vocab, stats=stats, kv=kv, graph=graph, prep=prep,
                          train=train, valid=valid, test=test,
                          pool=build_response_pool(train))


def write_inputs(outdir, n_train: int = 50, n_valid: int = 10, n_test: int = 15,
                 conv_len: int = 8, seed: int = 7) -> None:
    """Raw CLI-format inputs: conversations, triplets, POS lexicon, stopwords."""
    import json
    from pathlib import Path

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for split, n, s in (("train", n_train, seed), ("valid", n_valid, seed + 1),
                        ("test", n_test, seed + 2)):
        with open(out / f"{split}.jsonl", "w", encoding="utf-8") as f:
            for conv in generate_conversations(n, conv_len, s):
                f.write(json.dumps({"utterances": conv}) + "\n")
    with open(out / "triplets.tsv", "w", encoding="utf-8") as f:
        f.write("# head\trelation\ttail\tweight\n")
        for t in synthetic_triplets():
            f.write(f"{t.head}\t{t.relation}\t{t.tail}\t{t.weight}\n")
    with open(out / "pos_lexicon.tsv", "w", encoding="utf-8") as f:
        for tok, tag in sorted(synthetic_pos_lexicon().table.items()):
            f.write(f"{tok}\t{tag}\n")
    (out / "stopwords.txt").write_text("", encoding="utf-8")


# ---- chain world for strategy/self-play soundness checks ----

@dataclass
class ChainWorld:
    graph: CkgGraph
    kv: object
    prep: Preprocessor
    pool: ResponsePool
    labels: list[str]
    start: object          # Utterance mentioning the first chain node
    target: str            # last chain node label


def build_chain_world(diameter: int = 5) -> ChainWorld:
    """A path graph c0 - c1 - ... - c<D> with one pool response per node."""
    labels = [f"step{i}" for i in range(diameter + 1)]
    texts = [f"now i think about {lab} again" for lab in labels]
    start_text = f"we begin from {labels[0]} here"
    tokenized = [tokenize(t) for t in texts + [start_text]]
    vocab, stats = build_vocab(tokenized)
    counts: dict[str, int] = {}
    for toks in tokenized:
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
    pos = PosLexicon({lab: "noun" for lab in labels})
    kv = build_keyword_vocab(vocab, counts, stats, pos, frozenset(), min_count=1)
    trips = [CkgTriplet(labels[i], "NextTo", labels[i + 1], 2.0)
             for i in range(diameter)]
    graph = load_graph(trips, vocab, kv)
    prep = Preprocessor(vocab, kv, stats, pos, frozenset(), graph)
    pool = ResponsePool()
    for t in texts:
        pool.add(prep.utterance(t))
    return ChainWorld(graph=graph, kv=kv, prep=prep, pool=pool, labels=labels,
                      start=prep.utterance(start_text), target=labels[-1])
