"""Workdir layout, prepared-artifact IO, and run manifests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from kgconv import data as D
from kgconv import graph as G
from kgconv import text as X
from kgconv.config import RunConfig
from kgconv.errors import ConfigurationError

VOCAB_FILE = "vocab.txt"
KEYWORDS_FILE = "keyword_vocab.tsv"
STATS_FILE = "stats.json"
GRAPH_FILE = "graph.tsv"
POOL_FILE = "pool.jsonl"
PREDICTOR_CKPT = "checkpoints/predictor.npz"
MATCHER_CKPT = "checkpoints/matcher.npz"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(workdir: Path, command: str, cfg: RunConfig,
                   inputs: Sequence[str], outputs: Sequence[str]) -> Path:
    mdir = workdir / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg.to_json(),
        "input_hashes": {str(p): file_sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
    }
    path = mdir / f"{command}.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ConfigurationError(f"missing artifact: {path} (run `{hint}` first)")
    return path


@dataclass
class Workspace:
    """Prepared artifacts loaded back from a workdir."""
    root: Path
    vocab: X.Vocab
    kv: X.KeywordVocab
    stats: X.TfIdfStats
    pos: X.PosLexicon
    stopwords: frozenset[str]
    graph: G.CkgGraph
    prep: D.Preprocessor
    conversations: dict[str, list[D.Conversation]]
    pool: D.ResponsePool


def save_stats(path, stats: X.TfIdfStats) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"t_docs": stats.t_docs, "df": stats.df}, f, sort_keys=True)


def load_stats(path) -> X.TfIdfStats:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return X.TfIdfStats(df=d["df"], t_docs=d["t_docs"])


def load_keyword_vocab(path, vocab: X.Vocab) -> X.KeywordVocab:
    ids = []
    dfs = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            token, _, df = line.partition("\t")
            vid = vocab.token_index.get(token)
            if vid is None:
                raise ConfigurationError(f"keyword {token!r} missing from vocab")
            ids.append(vid)
            dfs.append(int(df or 0))
    kv = X.KeywordVocab(vocab, ids, {})
    for kw_id, df in zip(range(len(kv)), dfs):
        kv.df[kw_id] = df
    return kv


def save_pool(path, pool: D.ResponsePool) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, u in enumerate(pool.responses):
            f.write(json.dumps({"id": i, **D.utterance_to_json(u)}, sort_keys=True) + "\n")


def load_pool(path) -> D.ResponsePool:
    pool = D.ResponsePool()
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                pool.add(D.utterance_from_json(json.loads(line)))
    return pool


def load_workspace(workdir, pos_path: str = "", stopword_path: str = "") -> Workspace:
    root = Path(workdir)
    require(root / VOCAB_FILE, "kgconv prepare")
    vocab = X.Vocab.load(root / VOCAB_FILE)
    kv = load_keyword_vocab(require(root / KEYWORDS_FILE, "kgconv prepare"), vocab)
    stats = load_stats(require(root / STATS_FILE, "kgconv prepare"))
    pos = X.PosLexicon.load(pos_path) if pos_path else X.PosLexicon.bundled()
    stopwords = X.load_stopwords(stopword_path or None)
    graph = G.load_snapshot(require(root / GRAPH_FILE, "kgconv prepare"),
                            vocab.sha256(), kv.sha256())
    prep = D.Preprocessor(vocab, kv, stats, pos, stopwords, graph)
    conversations = {}
    for split in ("train", "valid", "test"):
        p = root / f"{split}.conv.jsonl"
        if p.exists():
            conversations[split] = D.load_conversations(p)
    pool = load_pool(require(root / POOL_FILE, "kgconv prepare"))
    return Workspace(root=root, vocab=vocab, kv=kv, stats=stats, pos=pos,
                     stopwords=stopwords, graph=graph, prep=prep,
                     conversations=conversations, pool=pool)


def prepare_workdir(cfg: RunConfig, workdir) -> dict:
    """Run the full preparation pipeline from raw inputs; returns stats."""
    root = Path(workdir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "checkpoints").mkdir(exist_ok=True)
    src = Path(cfg.data.conversations)
    raw = {}
    for split in ("train", "valid", "test"):
        p = src / f"{split}.jsonl"
        if p.exists():
            raw[split] = D.read_conversation_records(p)
    if "train" not in raw:
        raise ConfigurationError(f"missing artifact: {src / 'train.jsonl'}")

    tokenized = [X.tokenize(t) for conv in raw["train"] for t in conv]
    vocab, stats = X.build_vocab(tokenized, cap=cfg.data.vocab_cap)
    counts: dict[str, int] = {}
    for toks in tokenized:
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
    pos = (X.PosLexicon.load(cfg.data.pos_lexicon) if cfg.data.pos_lexicon
           else X.PosLexicon.bundled())
    stopwords = X.load_stopwords(cfg.data.stopwords or None)
    kv = X.build_keyword_vocab(vocab, counts, stats, pos, stopwords,
                               min_count=cfg.data.keyword_min_count)
    if not len(kv):
        raise ConfigurationError("keyword vocabulary is empty; lower "
                                 "--data.keyword_min_count or fix the POS lexicon")
    graph = G.load_graph(cfg.data.triplets, vocab, kv)
    prep = D.Preprocessor(vocab, kv, stats, pos, stopwords, graph)

    vocab.save(root / VOCAB_FILE)
    kv.save(root / KEYWORDS_FILE)
    save_stats(root / STATS_FILE, stats)
    G.save_snapshot(root / GRAPH_FILE, graph, vocab.sha256(), kv.sha256())

    info = {"vocab": len(vocab), "keywords": len(kv),
            "graph_nodes": graph.n_nodes, "graph_edges": graph.n_edges}
    convs = {}
    for split, records in raw.items():
        convs[split] = D.ingest(records, prep, split)
        D.save_conversations(root / f"{split}.conv.jsonl", convs[split])
        ds = D.make_prediction_examples(convs[split], graph, kv)
        info[f"{split}_conversations"] = len(convs[split])
        info[f"{split}_utterances"] = sum(len(c.utterances) for c in convs[split])
        info[f"{split}_prediction_examples"] = len(ds.examples)
        info[f"{split}_prediction_dropped"] = ds.dropped
    pool = D.build_response_pool(convs["train"])
    save_pool(root / POOL_FILE, pool)
    info["pool"] = len(pool)
    with open(root / "prepare.stats.json", "w", encoding="utf-8") as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write("\n")
    return info
