import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgconv.errors import ConfigurationError
from kgconv.text import (BOS, EOS, PAD, SPECIALS, UNK, PosLexicon, Vocab,
                         build_keyword_vocab, build_vocab, extract_keywords,
                         load_stopwords, tokenize)


class TestTokenize:
    def test_contractions_and_punctuation(self):
        assert tokenize("I'm well, thanks.") == ["i", "'m", "well", ",", "thanks", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_plain_words(self):
        assert tokenize("Pearl Jam") == ["pearl", "jam"]

    def test_deterministic(self):
        s = "Don't worry; be HAPPY!!"
        assert tokenize(s) == tokenize(s)


class TestVocab:
    def test_specials_fixed(self):
        v = Vocab(["cat"])
        assert v.tokens[:4] == list(SPECIALS)
        assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)

    def test_roundtrip_and_unk(self):
        v = Vocab(["cat", "dog"])
        for tok in ["cat", "dog"]:
            assert v.decode(v.encode_token(tok)) == tok
        assert v.encode_token("zebra") == UNK

    def test_cap_and_tie_break(self):
        corpus = [["a"] * 3, ["b"] * 2, ["c"], ["d"]]
        vocab, _ = build_vocab(corpus, cap=2)
        assert set(vocab.tokens[4:]) == {"a", "b"}
        # ties broken lexicographically
        vocab2, _ = build_vocab([["b"], ["a"]], cap=1)
        assert vocab2.tokens[4:] == ["a"]

    def test_empty_corpus(self):
        with pytest.raises(ConfigurationError):
            build_vocab([])

    def test_snapshot_roundtrip(self, tmp_path):
        vocab, _ = build_vocab([["x", "y", "z"]])
        vocab.save(tmp_path / "v.txt")
        v2 = Vocab.load(tmp_path / "v.txt")
        assert v2.tokens == vocab.tokens
        assert v2.sha256() == vocab.sha256()

    def test_df_recorded_per_utterance(self):
        _, stats = build_vocab([["a", "a", "b"], ["a"]])
        assert stats.t_docs == 2
        assert stats.df["a"] == 2 and stats.df["b"] == 1


def make_kv(tokens, tags, counts=None, min_count=1):
    corpus = []
    counts = counts or {t: 5 for t in tokens}
    for t in tokens:
        for _ in range(counts[t]):
            corpus.append([t])
    vocab, stats = build_vocab(corpus)
    pos = PosLexicon(tags)
    kv = build_keyword_vocab(vocab, counts, stats, pos, frozenset(), min_count=min_count)
    return vocab, stats, pos, kv


class TestKeywordVocab:
    def test_pos_filter(self):
        _, _, _, kv = make_kv(["run", "the"], {"run": "verb", "the": "other"})
        assert kv.contains_token("run") and not kv.contains_token("the")

    def test_frequency_floor(self):
        _, _, _, kv = make_kv(["rare", "common"], {"rare": "noun", "common": "noun"},
                              counts={"rare": 2, "common": 20}, min_count=10)
        assert kv.contains_token("common") and not kv.contains_token("rare")

    def test_stopwords_excluded(self):
        vocab, stats = build_vocab([["love", "like"]] * 5)
        kv = build_keyword_vocab(vocab, {"love": 5, "like": 5}, stats,
                                 PosLexicon({"love": "verb", "like": "verb"}),
                                 frozenset({"like"}), min_count=1)
        assert kv.contains_token("love") and not kv.contains_token("like")

    def test_ids_subset_of_vocab(self):
        vocab, _, _, kv = make_kv(["music", "guitar"],
                                  {"music": "noun", "guitar": "noun"})
        for vid in kv.vocab_ids:
            assert 0 <= vid < len(vocab)


class TestExtractKeywords:
    def setup_method(self):
        tags = {"music": "noun", "guitar": "noun", "violin": "noun",
                "love": "verb", "playing": "verb"}
        corpus = [["music"], ["guitar"], ["violin"], ["love"] * 1, ["playing"]]
        corpus += [["love"]] * 9  # high df for "love"
        self.vocab, self.stats = build_vocab(corpus)
        counts = {"music": 1, "guitar": 1, "violin": 1, "love": 10, "playing": 1}
        self.pos = PosLexicon(tags)
        self.kv = build_keyword_vocab(self.vocab, counts, self.stats, self.pos,
                                      frozenset(), min_count=1)

    def test_case_study_keywords(self):
        toks = tokenize("i love music and playing my guitar and violin")
        kws = extract_keywords(toks, self.pos, self.stats, self.kv)
        names = {self.kv.token(k) for k in kws}
        assert {"music", "guitar", "violin"} <= names

    def test_all_stopword_utterance(self):
        stop = frozenset({"love"})
        kws = extract_keywords(["love", "love"], self.pos, self.stats, self.kv, stop)
        assert kws == []

    def test_cap_at_10(self):
        tags = {f"w{i}": "noun" for i in range(12)}
        vocab, stats = build_vocab([[f"w{i}"] for i in range(12)] + [["x"]] * 5)
        kv = build_keyword_vocab(vocab, {f"w{i}": 1 for i in range(12)}, stats,
                                 PosLexicon(tags), frozenset(), min_count=1)
        kws = extract_keywords([f"w{i}" for i in range(12)], PosLexicon(tags),
                               stats, kv)
        assert len(kws) == 10

    def test_every_output_in_kv(self):
        toks = tokenize("love music playing guitar unknown zz")
        kws = extract_keywords(toks, self.pos, self.stats, self.kv)
        for k in kws:
            assert 0 <= k < len(self.kv)

    def test_zero_idf_never_beats_positive(self):
        # "love" appears in every document -> idf 0; "music" is rare
        corpus = [["love", "music"], ["love"], ["love"]]
        vocab, stats = build_vocab(corpus)
        assert stats.idf("love") == 0.0
        kv = build_keyword_vocab(vocab, {"love": 3, "music": 1}, stats, self.pos,
                                 frozenset(), min_count=1)
        kws = extract_keywords(["love", "music"], self.pos, stats, kv)
        assert kv.token(kws[0]) == "music"

    def test_ties_by_utterance_order_and_dedup(self):
        tags = {"ant": "noun", "bee": "noun"}
        vocab, stats = build_vocab([["ant"], ["bee"], ["x"]])
        kv = build_keyword_vocab(vocab, {"ant": 1, "bee": 1}, stats,
                                 PosLexicon(tags), frozenset(), min_count=1)
        kws = extract_keywords(["bee", "ant", "bee"], PosLexicon(tags), stats, kv)
        assert [kv.token(k) for k in kws] == ["bee", "ant"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["music", "guitar", "love", "the", "x"]),
                max_size=40))
def test_extract_keywords_bounds(tokens):
    tags = {"music": "noun", "guitar": "noun", "love": "verb"}
    vocab, stats = build_vocab([["music", "guitar", "love", "the", "x"]] * 3)
    kv = build_keyword_vocab(vocab, {"music": 3, "guitar": 3, "love": 3}, stats,
                             PosLexicon(tags), frozenset(), min_count=1)
    kws = extract_keywords(tokens, PosLexicon(tags), stats, kv)
    assert len(kws) <= 10
    assert len(set(kws)) == len(kws)
    for k in kws:
        assert kv.token(k) in {"music", "guitar", "love"}


def test_bundled_assets_load():
    pos = PosLexicon.bundled()
    assert pos.tag("music") == "noun"
    assert pos.tag("zzzz-unknown") == "other"
    stop = load_stopwords()
    assert "the" in stop and "music" not in stop
