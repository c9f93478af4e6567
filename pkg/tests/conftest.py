import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgconv.data import make_prediction_examples, make_retrieval_examples
from kgconv.synthetic import build_world
from kgconv.text import KeywordVocab, PosLexicon, TfIdfStats, Vocab


class SimpleVocabs:
    """Small hand-built vocab/keyword-vocab pair for graph and text tests."""

    def __init__(self, words, keywords):
        self.vocab = Vocab(sorted(set(words) | set(keywords)))
        ids = [self.vocab.token_index[k] for k in keywords]
        self.kv = KeywordVocab(self.vocab, ids, {i: 1 for i in range(len(ids))})
        self.stats = TfIdfStats(df={w: 1 for w in words}, t_docs=10)
        self.pos = PosLexicon({k: "noun" for k in keywords})


@pytest.fixture(scope="session")
def world():
    return build_world()


@pytest.fixture(scope="session")
def pred_examples(world):
    return make_prediction_examples(world.train, world.graph, world.kv)


@pytest.fixture(scope="session")
def retr_examples(world):
    return make_retrieval_examples(world.train, seed=21, context_cap=2)
