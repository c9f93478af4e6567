"""Tokenization, vocabulary construction, and TF-IDF + POS keyword extraction."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

from kgconv.errors import ConfigurationError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")
DEFAULT_VOCAB_CAP = 20000

CONTENT_TAGS = frozenset({"noun", "verb", "adj"})

_TOKEN_RE = re.compile(r"'\w+|\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into separate tokens, keep contraction
    suffixes as their own tokens ("i'm" -> ["i", "'m"])."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token <-> id bijection with fixed specials PAD=0, UNK=1, BOS=2, EOS=3."""

    def __init__(self, content_tokens: Sequence[str]):
        self.tokens: list[str] = list(SPECIALS) + list(content_tokens)
        self.token_index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_index) != len(self.tokens):
            raise ConfigurationError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def contains(self, token: str) -> bool:
        return token in self.token_index

    def encode_token(self, token: str) -> int:
        return self.token_index.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.encode_token(t) for t in tokens]

    def decode(self, idx: int) -> str:
        return self.tokens[idx]

    def snapshot(self) -> str:
        return "\n".join(self.tokens) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.snapshot().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.snapshot())

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as f:
            tokens = f.read().splitlines()
        if tokens[: len(SPECIALS)] != list(SPECIALS):
            raise ConfigurationError("vocab snapshot missing special tokens")
        return cls(tokens[len(SPECIALS):])


@dataclass
class TfIdfStats:
    df: dict[str, int]
    t_docs: int

    def idf(self, token: str) -> float:
        d = self.df.get(token)
        if d is None:
            return 0.0
        return math.log(self.t_docs / d)


def build_vocab(corpus: Iterable[Sequence[str]], cap: int = DEFAULT_VOCAB_CAP
                ) -> tuple[Vocab, TfIdfStats]:
    """Top-`cap` tokens by frequency (ties lexicographic) plus specials;
    document frequency is counted per utterance."""
    counts: Counter[str] = Counter()
    df: Counter[str] = Counter()
    t_docs = 0
    for utterance in corpus:
        t_docs += 1
        counts.update(utterance)
        df.update(set(utterance))
    if t_docs == 0 or not counts:
        raise ConfigurationError("empty corpus: cannot build vocabulary")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[:cap]]
    vocab = Vocab(kept)
    return vocab, TfIdfStats(df={t: df[t] for t in df}, t_docs=t_docs)


class PosLexicon:
    """Token -> coarse tag (noun/verb/adj/other); unknown tokens tag as other."""

    def __init__(self, table: dict[str, str]):
        self.table = table

    def tag(self, token: str) -> str:
        return self.table.get(token, "other")

    @classmethod
    def load(cls, path) -> "PosLexicon":
        table = {}
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                token, _, tag = line.partition("\t")
                table[token] = tag.strip()
        return cls(table)

    @classmethod
    def bundled(cls) -> "PosLexicon":
        text = resources.files("kgconv").joinpath("assets/pos_lexicon.tsv").read_text("utf-8")
        table = {}
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            token, _, tag = line.partition("\t")
            table[token] = tag.strip()
        return cls(table)


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = resources.files("kgconv").joinpath("assets/stopwords.txt").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    return frozenset(w for w in text.splitlines() if w and not w.startswith("#"))


class KeywordVocab:
    """The subset of vocab tokens usable as conversation keywords."""

    def __init__(self, vocab: Vocab, vocab_ids: Sequence[int], df: dict[int, int]):
        self.vocab = vocab
        self.vocab_ids: list[int] = sorted(vocab_ids)
        self.kw_index: dict[int, int] = {v: k for k, v in enumerate(self.vocab_ids)}
        self.df = dict(df)

    def __len__(self) -> int:
        return len(self.vocab_ids)

    def contains_vocab_id(self, vocab_id: int) -> bool:
        return vocab_id in self.kw_index

    def contains_token(self, token: str) -> bool:
        idx = self.vocab.token_index.get(token)
        return idx is not None and idx in self.kw_index

    def kw_id(self, token: str) -> int | None:
        idx = self.vocab.token_index.get(token)
        if idx is None:
            return None
        return self.kw_index.get(idx)

    def token(self, kw_id: int) -> str:
        return self.vocab.decode(self.vocab_ids[kw_id])

    def tokens(self) -> list[str]:
        return [self.vocab.decode(v) for v in self.vocab_ids]

    def sha256(self) -> str:
        text = "\n".join(self.tokens()) + "\n"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for kw_id, vocab_id in enumerate(self.vocab_ids):
                f.write(f"{self.vocab.decode(vocab_id)}\t{self.df.get(kw_id, 0)}\n")


def build_keyword_vocab(vocab: Vocab, counts: dict[str, int], stats: TfIdfStats,
                        pos: PosLexicon, stopwords: frozenset[str],
                        min_count: int = 10) -> KeywordVocab:
    """Content words (noun/verb/adj, not stopwords) above a frequency floor."""
    ids = []
    df = {}
    for token, n in counts.items():
        if n < min_count or token in stopwords:
            continue
        if pos.tag(token) not in CONTENT_TAGS:
            continue
        vid = vocab.token_index.get(token)
        if vid is None or vid < len(SPECIALS):
            continue
        ids.append(vid)
    ids.sort()
    kv = KeywordVocab(vocab, ids, {})
    for kw_id, vid in enumerate(kv.vocab_ids):
        kv.df[kw_id] = stats.df.get(vocab.decode(vid), 0)
    return kv


def extract_keywords(tokens: Sequence[str], pos: PosLexicon, stats: TfIdfStats,
                     kv: KeywordVocab, stopwords: frozenset[str] = frozenset(),
                     cap: int = 10) -> list[int]:
    """TF-IDF scored content words of the utterance, top-`cap`, ties by
    utterance order, deduplicated keeping the first occurrence."""
    first_pos: dict[str, int] = {}
    tf: Counter[str] = Counter()
    for i, tok in enumerate(tokens):
        if tok in stopwords or pos.tag(tok) not in CONTENT_TAGS:
            continue
        if not kv.contains_token(tok):
            continue
        tf[tok] += 1
        first_pos.setdefault(tok, i)
    scored = sorted(
        first_pos,
        key=lambda tok: (-(tf[tok] * stats.idf(tok)), first_pos[tok]),
    )
    return [kv.kw_id(tok) for tok in scored[:cap]]
