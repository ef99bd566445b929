"""Command-line entry points: preprocess, triples, train, eval, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ModelConfig, TrainConfig
from .corpus import (CorpusSplit, build_vocab, load_corpus, save_corpus,
                     tokenize, Vocabulary)
from .evaluator import WordVectors, evaluate_pairs, model_perplexity
from .triple_builder import (ConceptLexicon, FileAnnotator,
                             RuleBasedAnnotator, collect_dialogue_triples,
                             save_dialogue_stores, load_dialogue_stores)


def _load_splits(corpus_path: Path) -> dict[str, CorpusSplit]:
    if corpus_path.is_dir():
        splits = {}
        for f in sorted(corpus_path.glob("*.jsonl")):
            splits[f.stem] = load_corpus(f, name=f.stem)
        if not splits:
            raise SystemExit(f"no .jsonl files in {corpus_path}")
        return splits
    return {"train": load_corpus(corpus_path, name="train")}


def cmd_preprocess(args) -> int:
    splits = _load_splits(Path(args.input))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    vocab_source = splits.get("train") or next(iter(splits.values()))
    vocab = build_vocab(vocab_source, args.vocab_size)
    vocab.save(out / "vocab.txt")
    for name, split in splits.items():
        save_corpus(split, out / f"{name}.jsonl")
    meta = {"vocab_size": vocab.size, "topk": args.topk}
    (out / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
    print(f"wrote {len(splits)} split(s) and a vocabulary of {vocab.size} "
          f"tokens to {out}")
    return 0


def cmd_triples(args) -> int:
    splits = _load_splits(Path(args.corpus))
    lexicon = ConceptLexicon.load_tsv(args.lexicon)
    vocab = (Vocabulary.load(args.vocab) if args.vocab
             else build_vocab(next(iter(splits.values())), args.vocab_size))
    annotator = (FileAnnotator(args.annotations) if args.annotations
                 else RuleBasedAnnotator())
    stores = {}
    for split in splits.values():
        for d in split.dialogues:
            coref = annotator.coref(d)
            stores[d.dialogue_id] = collect_dialogue_triples(
                d, coref, annotator, lexicon, vocab)
    save_dialogue_stores(stores, args.output)
    total = sum(len(s) for s in stores.values())
    print(f"wrote {total} triples for {len(stores)} dialogues to "
          f"{args.output}")
    return 0


def cmd_train(args) -> int:
    from .trainer import save_checkpoint, train

    with open(args.config, "r", encoding="utf-8") as f:
        raw = json.load(f)
    corpus_dir = Path(args.corpus)
    train_split = load_corpus(corpus_dir / "train.jsonl", "train")
    valid_path = corpus_dir / "valid.jsonl"
    valid_split = (load_corpus(valid_path, "valid") if valid_path.exists()
                   else train_split)
    vocab = Vocabulary.load(corpus_dir / "vocab.txt")
    stores = load_dialogue_stores(args.triples) if args.triples else {}
    mcfg = ModelConfig.from_dict({"vocab_size": vocab.size,
                                  "triple_vocab_size": 1,
                                  **raw.get("model", {})})
    tcfg = TrainConfig.from_dict(raw.get("train", {}))
    selector_k = 2
    meta_path = corpus_dir / "meta.json"
    if meta_path.exists():
        selector_k = json.loads(meta_path.read_text()).get("topk", 2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_f = open(out / "train_log.jsonl", "w", encoding="utf-8")

    def log(entry):
        log_f.write(json.dumps(entry) + "\n")
        log_f.flush()
        print(f"epoch {entry['epoch']}: train {entry['train_loss']:.4f} "
              f"valid {entry['valid_loss']:.4f} "
              f"({entry['seconds']:.1f}s)")

    try:
        ckpt = train(train_split, valid_split, stores, vocab, mcfg, tcfg,
                     log=log, selector_k=selector_k)
    finally:
        log_f.close()
    save_checkpoint(ckpt, out / "checkpoint")
    print(f"best epoch {ckpt.epoch} (valid loss {ckpt.valid_loss:.4f}) "
          f"saved to {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    with open(args.hyp, "r", encoding="utf-8") as f:
        hyps = [tokenize(line) for line in f.read().splitlines()]
    with open(args.ref, "r", encoding="utf-8") as f:
        refs = [tokenize(line) for line in f.read().splitlines()]
    if len(hyps) != len(refs):
        raise SystemExit(
            f"{len(hyps)} hypotheses vs {len(refs)} references")
    vectors = WordVectors.load(args.vectors) if args.vectors else None
    ppl = None
    if args.model and args.corpus:
        from .trainer import load_checkpoint
        ckpt = load_checkpoint(args.model)
        corpus_dir = Path(args.corpus)
        split = load_corpus(corpus_dir / "test.jsonl", "test") \
            if (corpus_dir / "test.jsonl").exists() \
            else load_corpus(corpus_dir / "train.jsonl", "train")
        stores = load_dialogue_stores(args.triples) if args.triples else {}
        ppl = model_perplexity(ckpt.build(), split, stores, ckpt.vocab,
                               ckpt.triple_vocab)
    report = evaluate_pairs(list(zip(hyps, refs)), vectors, ppl)
    print(report.dumps())
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    serve(args.checkpoint, port=args.port, host=args.host, ui_dir=args.ui)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cntf",
        description="knowledge-grounded dialogue model tooling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize a corpus, build vocab")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--vocab-size", type=int, default=30004,
                   dest="vocab_size")
    p.add_argument("--topk", type=int, default=2)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("triples", help="build per-dialogue triple stores")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--annotations", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--vocab-size", type=int, default=30004,
                   dest="vocab_size")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_triples)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score hypothesis/reference files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--vectors", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--triples", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the chat/inspection service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", default=None)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
