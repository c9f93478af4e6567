"""Command-line entry points for the full pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from kgconv import artifacts as A
from kgconv import data as D
from kgconv.config import RunConfig, add_config_arguments, resolve_config
from kgconv.errors import KgconvError
from kgconv.metrics import RankedPrediction, mrr, precision_at_1, recall_at_k
from kgconv.nn.optim import AdamState
from kgconv.nn.params import (checkpoint_hash, load_checkpoint,
                              load_pretrained_embeddings, save_checkpoint)

COMMANDS = ("prepare", "train-predictor", "train-matcher", "eval-predictor",
            "eval-matcher", "selfplay", "predict", "rank", "serve",
            "make-synthetic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgconv",
                                     description="target-guided conversation engine")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--workdir", default="workdir")
    parser.add_argument("--split", default="test", choices=("train", "valid", "test"))
    parser.add_argument("--input", default=None, help="input file for predict/rank")
    parser.add_argument("--out", default=None, help="output path override")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8040)
    parser.add_argument("--reveal-target", action="store_true")
    parser.add_argument("--demo-synthetic", action="store_true",
                        help="serve an in-memory synthetic engine (no workdir needed)")
    add_config_arguments(parser)
    return parser


def _load_predictor(ws: A.Workspace, cfg: RunConfig, path: Path):
    from kgconv.predictor import PredictorConfig, PredictorModel
    pcfg = PredictorConfig(d1=cfg.model.d1, d2=cfg.model.d2,
                           relation_buckets=cfg.model.relation_buckets,
                           use_concepts=cfg.model.use_concepts, seed=cfg.model.seed)
    model = PredictorModel(ws.vocab, ws.kv, ws.graph, pcfg)
    params, meta = load_checkpoint(path)
    model.ps.load_params(params)
    return model, meta


def _load_matcher(ws: A.Workspace, cfg: RunConfig, path: Path):
    from kgconv.matcher import MatcherConfig, MatcherModel
    mcfg = MatcherConfig(d=cfg.model.d, relation_buckets=cfg.model.relation_buckets,
                         lambda_k=cfg.model.lambda_k,
                         use_concepts=cfg.model.use_concepts,
                         use_keywords=cfg.model.use_keywords, seed=cfg.model.seed)
    model = MatcherModel(ws.vocab, ws.kv, ws.graph, mcfg)
    params, meta = load_checkpoint(path)
    model.ps.load_params(params)
    return model, meta


def _embeddings(ws: A.Workspace, cfg: RunConfig, dim: int):
    if not cfg.model.embeddings:
        return None
    import numpy as np
    rng = np.random.default_rng(cfg.model.seed)
    return load_pretrained_embeddings(cfg.model.embeddings, ws.vocab.tokens, dim, rng)


def cmd_prepare(args, cfg: RunConfig) -> int:
    workdir = Path(args.workdir)
    info = A.prepare_workdir(cfg, workdir)
    inputs = [Path(cfg.data.conversations) / f"{s}.jsonl" for s in ("train", "valid", "test")]
    inputs.append(cfg.data.triplets)
    A.write_manifest(workdir, "prepare", cfg, [str(p) for p in inputs],
                     [str(workdir / A.VOCAB_FILE), str(workdir / A.GRAPH_FILE),
                      str(workdir / A.POOL_FILE)])
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def cmd_train_predictor(args, cfg: RunConfig) -> int:
    from kgconv import predictor as P
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    pcfg = P.PredictorConfig(d1=cfg.model.d1, d2=cfg.model.d2,
                             relation_buckets=cfg.model.relation_buckets,
                             use_concepts=cfg.model.use_concepts, seed=cfg.model.seed)
    model = P.PredictorModel(ws.vocab, ws.kv, ws.graph, pcfg,
                             embeddings=_embeddings(ws, cfg, cfg.model.d2))
    train_ds = D.make_prediction_examples(ws.conversations["train"], ws.graph, ws.kv)
    valid_ds = (D.make_prediction_examples(ws.conversations["valid"], ws.graph, ws.kv)
                if "valid" in ws.conversations else None)
    opt = AdamState(lr=cfg.train.lr, epoch_decay=cfg.train.decay)
    result = P.train(train_ds.examples, model, opt, epochs=cfg.train.epochs,
                     batch_size=cfg.train.batch_size,
                     valid=valid_ds.examples if valid_ds else None,
                     patience=cfg.train.patience, seed=cfg.train.seed, log=print)
    out = Path(args.out) if args.out else ws.root / A.PREDICTOR_CKPT
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model.ps, {
        "kind": "predictor", "epoch": result.best_epoch,
        "best_valid_r1": result.best_valid_r1, "config": cfg.to_json()["model"],
        "train_seed": cfg.train.seed,
    })
    A.write_manifest(ws.root, "train-predictor", cfg,
                     [str(ws.root / A.VOCAB_FILE), str(ws.root / A.GRAPH_FILE)],
                     [str(out)])
    print(f"saved {out} (sha256 {checkpoint_hash(out)[:12]})")
    return 0


def cmd_train_matcher(args, cfg: RunConfig) -> int:
    from kgconv import matcher as M
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    pred_path = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    predictor, _ = _load_predictor(ws, cfg, pred_path)
    mcfg = M.MatcherConfig(d=cfg.model.d, relation_buckets=cfg.model.relation_buckets,
                           lambda_k=cfg.model.lambda_k,
                           use_concepts=cfg.model.use_concepts,
                           use_keywords=cfg.model.use_keywords, seed=cfg.model.seed)
    model = M.MatcherModel(ws.vocab, ws.kv, ws.graph, mcfg,
                           embeddings=_embeddings(ws, cfg, cfg.model.d))
    train_ex = D.make_retrieval_examples(ws.conversations["train"], seed=cfg.data.seed,
                                         context_cap=cfg.data.context_cap)
    valid_ex = (D.make_retrieval_examples(ws.conversations["valid"], seed=cfg.data.seed + 1,
                                          context_cap=cfg.data.context_cap)
                if "valid" in ws.conversations else None)
    opt = AdamState(lr=cfg.train.lr, epoch_decay=cfg.train.decay)
    result = M.train(train_ex, predictor, model, opt, epochs=cfg.train.epochs,
                     batch_size=cfg.train.batch_size, valid=valid_ex,
                     patience=cfg.train.patience, seed=cfg.train.seed, log=print)
    out = Path(args.out) if args.out else ws.root / A.MATCHER_CKPT
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model.ps, {
        "kind": "matcher", "epoch": result.best_epoch,
        "best_valid_r1": result.best_valid_r1, "config": cfg.to_json()["model"],
        "train_seed": cfg.train.seed,
    })
    A.write_manifest(ws.root, "train-matcher", cfg, [str(pred_path)], [str(out)])
    print(f"saved {out} (sha256 {checkpoint_hash(out)[:12]})")
    return 0


def _report(rows: list[tuple[str, float, int]], path: Path, seed, ckpt: Path) -> None:
    for name, value, n in rows:
        print(f"{name}\t{value:.4f}\t{n}")
    summary = {
        "seed": seed,
        "checkpoint_sha256": checkpoint_hash(ckpt),
        "metrics": {name: value for name, value, _ in rows},
        "n_examples": rows[0][2] if rows else 0,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_eval_predictor(args, cfg: RunConfig) -> int:
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    ckpt = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    model, _ = _load_predictor(ws, cfg, ckpt)
    ds = D.make_prediction_examples(ws.conversations[args.split], ws.graph, ws.kv)
    preds = []
    for ex in ds.examples:
        out = model.forward(ex)
        ranked = [kw for kw, _ in out.top_k(len(out.mask))]
        preds.append(RankedPrediction(ranked, set(ex.gold)))
    n = len(preds)
    rows = [(f"R@{k}", sum(recall_at_k(p, k) for p in preds) / n, n) for k in (1, 3, 5)]
    rows.append(("P@1", sum(precision_at_1(p) for p in preds) / n, n))
    _report(rows, ws.root / f"reports/predictor.{args.split}.json", cfg.train.seed, ckpt)
    A.write_manifest(ws.root, "eval-predictor", cfg, [str(ckpt)],
                     [str(ws.root / f"reports/predictor.{args.split}.json")])
    return 0


def cmd_eval_matcher(args, cfg: RunConfig) -> int:
    from kgconv import matcher as M
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    pred_ckpt = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    match_ckpt = A.require(ws.root / A.MATCHER_CKPT, "kgconv train-matcher")
    predictor, _ = _load_predictor(ws, cfg, pred_ckpt)
    model, _ = _load_matcher(ws, cfg, match_ckpt)
    examples = D.make_retrieval_examples(ws.conversations[args.split],
                                         seed=cfg.data.seed + 2,
                                         context_cap=cfg.data.context_cap)
    preds = []
    for ex in examples:
        predicted = M.predicted_for_example(predictor, ex)
        ranking = M.rank_candidates(model, ex, predicted)
        preds.append(RankedPrediction(ranking, {0}))
    n = len(preds)
    rows = [(f"R@{k}", sum(recall_at_k(p, k) for p in preds) / n, n) for k in (1, 3, 5)]
    rows.append(("MRR", sum(mrr(p) for p in preds) / n, n))
    _report(rows, ws.root / f"reports/matcher.{args.split}.json", cfg.train.seed, match_ckpt)
    A.write_manifest(ws.root, "eval-matcher", cfg, [str(match_ckpt)],
                     [str(ws.root / f"reports/matcher.{args.split}.json")])
    return 0


def _build_engine(args, cfg: RunConfig):
    from kgconv.service import Engine
    if args.demo_synthetic:
        return Engine.demo_synthetic(cfg)
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    pred_ckpt = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    match_ckpt = A.require(ws.root / A.MATCHER_CKPT, "kgconv train-matcher")
    predictor, _ = _load_predictor(ws, cfg, pred_ckpt)
    matcher, _ = _load_matcher(ws, cfg, match_ckpt)
    return Engine.build(ws, predictor, matcher, cfg)


def cmd_selfplay(args, cfg: RunConfig) -> int:
    from kgconv.matcher import MatcherConfig, MatcherModel
    from kgconv.selfplay import (Agent, BaseUser, NeuralKeywordPolicy,
                                 SimulationConfig, run_selfplay)
    from kgconv.strategy import StrategyConfig
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    pred_ckpt = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    match_ckpt = A.require(ws.root / A.MATCHER_CKPT, "kgconv train-matcher")
    predictor, _ = _load_predictor(ws, cfg, pred_ckpt)
    matcher, _ = _load_matcher(ws, cfg, match_ckpt)
    base_cfg = MatcherConfig(d=cfg.model.d, relation_buckets=cfg.model.relation_buckets,
                             lambda_k=0.0, use_concepts=cfg.model.use_concepts,
                             use_keywords=False, seed=cfg.model.seed)
    base_matcher = MatcherModel(ws.vocab, ws.kv, ws.graph, base_cfg)
    base_matcher.ps.load_params({k: v for k, v in matcher.ps.params.items()})
    agent = Agent(NeuralKeywordPolicy(predictor), matcher, ws.pool, ws.graph, ws.kv,
                  strategy=StrategyConfig(mode=cfg.sim.strategy),
                  pool_size=cfg.sim.pool_size, topk=cfg.train.topk)
    user = BaseUser(base_matcher, ws.pool)
    starts = [c.utterances[0] for c in ws.conversations.get("test", ws.conversations["train"])]
    sim_cfg = SimulationConfig(max_agent_turns=cfg.sim.max_agent_turns,
                               pool_size=cfg.sim.pool_size,
                               n_dialogues=cfg.sim.n, seed=cfg.sim.seed)
    agg = run_selfplay(agent, user, starts, sim_cfg)
    out_dir = Path(args.out) if args.out else ws.root / "selfplay"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "transcripts.jsonl", "w", encoding="utf-8") as f:
        for r in agg.results:
            f.write(json.dumps({"config": cfg.to_json()["sim"], **r.to_json()},
                               sort_keys=True) + "\n")
    # agent turns are counted; #Turns averages successful dialogues only
    with open(out_dir / "summary.tsv", "w", encoding="utf-8") as f:
        f.write("Succ.\t#Turns\tn\taborted\n")
        row = agg.summary_row()
        f.write(f"{row['Succ.']}\t{row['#Turns'] if row['#Turns'] is not None else 'NA'}"
                f"\t{row['n']}\t{row['aborted']}\n")
    A.write_manifest(ws.root, "selfplay", cfg, [str(pred_ckpt), str(match_ckpt)],
                     [str(out_dir / "transcripts.jsonl"), str(out_dir / "summary.tsv")])
    print(f"Succ.\t{row['Succ.']}")
    print(f"#Turns\t{row['#Turns'] if row['#Turns'] is not None else 'NA'}")
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    from kgconv.predictor import predict_topk
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    ckpt = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    model, _ = _load_predictor(ws, cfg, ckpt)
    raw = json.load(open(args.input)) if args.input else json.load(sys.stdin)
    context = [ws.prep.utterance(t) for t in raw["utterances"]]
    result = predict_topk(model, context, ws.graph, k=cfg.train.topk)
    for kw, p in zip(result.keywords, result.probabilities):
        print(f"{ws.kv.token(kw)}\t{p:.6f}")
    return 0


def cmd_rank(args, cfg: RunConfig) -> int:
    from kgconv.matcher import predicted_for_example
    ws = A.load_workspace(args.workdir, cfg.data.pos_lexicon, cfg.data.stopwords)
    pred_ckpt = A.require(ws.root / A.PREDICTOR_CKPT, "kgconv train-predictor")
    match_ckpt = A.require(ws.root / A.MATCHER_CKPT, "kgconv train-matcher")
    predictor, _ = _load_predictor(ws, cfg, pred_ckpt)
    model, _ = _load_matcher(ws, cfg, match_ckpt)
    raw = json.load(open(args.input)) if args.input else json.load(sys.stdin)
    context = [ws.prep.utterance(t) for t in raw["context"]]
    cands = [ws.prep.utterance(t) for t in raw["candidates"]]
    from kgconv.predictor import predict_topk
    predicted = predict_topk(predictor, context, ws.graph, k=cfg.train.topk).keywords
    leaves = model.ps.leaves()
    _, scores = model.batch_scores(context, cands, predicted, leaves)
    order = sorted(range(len(cands)), key=lambda i: (-scores[i].s, i))
    for i in order:
        sc = scores[i]
        print(f"{i}\t{sc.s_u:.6f}\t{sc.s_k:.6f}\t{sc.s:.6f}")
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    import uvicorn
    from kgconv.service import create_app
    engine = _build_engine(args, cfg)
    log_path = Path(args.workdir) / "sessions.log.jsonl"
    app = create_app(engine, log_path, reveal_target=args.reveal_target,
                     max_agent_turns=cfg.sim.max_agent_turns)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_make_synthetic(args, cfg: RunConfig) -> int:
    from kgconv.synthetic import write_inputs
    out = Path(args.out or "data/synthetic")
    write_inputs(out)
    print(f"wrote synthetic corpus inputs to {out}")
    return 0


HANDLERS = {
    "prepare": cmd_prepare,
    "train-predictor": cmd_train_predictor,
    "train-matcher": cmd_train_matcher,
    "eval-predictor": cmd_eval_predictor,
    "eval-matcher": cmd_eval_matcher,
    "selfplay": cmd_selfplay,
    "predict": cmd_predict,
    "rank": cmd_rank,
    "serve": cmd_serve,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = resolve_config(args)
    try:
        return HANDLERS[args.command](args, cfg)
    except KgconvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
