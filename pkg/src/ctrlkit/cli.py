"""Command-line entry point wiring all library modules together.

Every verb validates its options before touching the filesystem, writes
only to declared output paths, and fixes all randomness from ``--seed``;
rerunning a command with the same inputs and seed produces byte-identical
artifacts.  Errors exit nonzero with a one-line ``error: <type>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


from . import (
    corpus,
    evaluation,
    model,
    ngram,
    sampler,
    tasks,
    tokenizer,
    trainer,
)


def _load_table(kind: str, corpus_path: str | None = None) -> corpus.CategoryTable:
    if kind == "default":
        return corpus.default_category_table()
    if kind == "auto":
        if corpus_path is None:
            raise ValueError("--table auto needs a corpus file")
        names: set[str] = set()
        with open(corpus_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    names.add(line.split("\t", 1)[0])
        return corpus.table_from_names(sorted(names))
    raise ValueError(f"unknown table {kind!r}; use 'default' or 'auto'")


def _write(path: str | None, content: str) -> None:
    if path is None:
        sys.stdout.write(content)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)


def _sampling_params(args) -> sampler.SamplingParams:
    if args.preset:
        sp = sampler.preset(args.preset)
    else:
        sp = sampler.SamplingParams()
    overrides = {}
    if args.temperature is not None:
        overrides["temperature"] = args.temperature
    if args.top_p is not None:
        overrides["nucleus_p"] = args.top_p
    if args.rep_penalty is not None:
        overrides["repetition_penalty"] = args.rep_penalty
    overrides["max_new_tokens"] = args.max_new_tokens
    overrides["rng_seed"] = args.seed if args.seed is not None else 0
    from dataclasses import replace

    return replace(sp, **overrides)


def cmd_train_tokenizer(args) -> int:
    table = _load_table(args.table, args.corpus)
    docs = corpus.load_corpus(args.corpus, table)
    vocab = tokenizer.train_bpe(docs, args.fraction, args.vocab_size)
    vocab = tokenizer.add_control_codes(vocab, table)
    tokenizer.save_vocab(args.out, vocab)
    print(f"wrote vocab of {len(vocab)} tokens ({vocab.base_size} base) to {args.out}")
    return 0


def _training_config(args) -> trainer.TrainingConfig:
    from dataclasses import replace

    tc = trainer.parse_training_config(args.config) if args.config else trainer.TrainingConfig()
    overrides = {}
    for field_name, arg_name in [
        ("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
    ]:
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field_name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(tc, **overrides)


def cmd_train(args) -> int:
    table = _load_table(args.table, args.corpus)
    docs = corpus.load_corpus(args.corpus, table)
    vocab = tokenizer.load_vocab(args.vocab)
    if args.arch == "full":
        config = model.full_scale_config(vocab_size=len(vocab))
    else:
        config = model.ModelConfig(
            layers=args.layers, heads=args.heads, model_dim=args.dim,
            inner_dim=args.inner, context=args.context, vocab_size=len(vocab),
        )
    tc = _training_config(args)
    ckpt = model.init_model(config, seed=args.seed if args.seed is not None else 0)
    checkpoints = trainer.train(ckpt, docs, vocab, tc)
    os.makedirs(args.out, exist_ok=True)
    for epoch, ck in enumerate(checkpoints, start=1):
        epoch_dir = os.path.join(args.out, f"ckpt-epoch{epoch:02d}")
        os.makedirs(epoch_dir, exist_ok=True)
        model.save_checkpoint(os.path.join(epoch_dir, "model.ckpt"), ck)
    print(f"wrote {len(checkpoints)} checkpoints under {args.out}")
    return 0


def cmd_generate(args) -> int:
    ckpt = model.load_checkpoint(args.ckpt)
    vocab = tokenizer.load_vocab(args.vocab)
    base_seed = args.seed if args.seed is not None else 0
    lines = []
    for i in range(args.num):
        from dataclasses import replace

        sp = replace(_sampling_params(args), rng_seed=base_seed + i)
        gr = sampler.generate(ckpt, vocab, args.prompt, args.occ, sp)
        body = [t for t in gr.generated_ids if t not in vocab.ecc_ids]
        record = {
            "prompt": args.prompt,
            "text": tokenizer.decode(vocab, body),
            "stop_reason": gr.stop_reason,
            "params": {
                "T": sp.temperature,
                "p": sp.nucleus_p,
                "r": sp.repetition_penalty,
                "max_new_tokens": sp.max_new_tokens,
                "seed": sp.rng_seed,
                "preset": args.preset,
            },
        }
        lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def cmd_grid(args) -> int:
    ckpt = model.load_checkpoint(args.ckpt)
    vocab = tokenizer.load_vocab(args.vocab)
    idx = ngram.load_index(args.idx) if args.idx else None
    grid = evaluation.GridSpec(
        p_values=_parse_floats(args.p_grid),
        t_values=_parse_floats(args.t_grid),
        r_values=_parse_floats(args.r_grid),
    )
    categories = [c for c in args.categories.split(",") if c]
    report = evaluation.grid_search(
        ckpt, vocab, categories, grid,
        texts_per_cell=args.texts_per_cell,
        max_new_tokens=args.max_new_tokens,
        idx=idx, base_seed=args.seed if args.seed is not None else 0,
        jobs=args.jobs,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    for cell in report.cells:
        name = (
            f"cell_{cell.category.replace('/', '_')}"
            f"_T{cell.temperature:.2f}_p{cell.nucleus_p:.2f}"
            f"_r{cell.repetition_penalty:.2f}.jsonl"
        )
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            for rec in cell.records:
                fh.write(rec.to_json() + "\n")
    print(f"wrote grid report with {len(report.cells)} cells to {args.out}")
    return 0


def cmd_perplexity(args) -> int:
    ckpt = model.load_checkpoint(args.ckpt)
    vocab = tokenizer.load_vocab(args.vocab)
    with open(args.text_file, encoding="utf-8") as fh:
        texts = [corpus._unescape(line.rstrip("\n")) for line in fh if line.strip()]
    window = args.window if args.window else ckpt.config.context
    lines = ["perplexity,window,token_count"]
    for text in texts:
        res = evaluation.sliding_perplexity(ckpt, vocab, text, window)
        lines.append(f"{res.value:.6f},{res.window},{res.token_count}")
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_index_build(args) -> int:
    table = _load_table(args.table, args.corpus)
    docs = corpus.load_corpus(args.corpus, table)
    idx = ngram.build_index(docs, k=args.k)
    ngram.save_index(args.out, idx)
    print(f"indexed {len(idx)} {args.k}-grams from {len(docs)} documents")
    return 0


def cmd_index_search(args) -> int:
    idx = ngram.load_index(args.idx)
    hits = ngram.search(idx, args.query)
    lines = [
        "\t".join([
            " ".join(h.ngram), str(h.tf), h.category, h.provenance, h.url or "-",
        ])
        for h in hits
    ]
    _write(args.out, "\n".join(lines) + ("\n" if lines else ""))
    return 0


def cmd_index_overlap(args) -> int:
    idx = ngram.load_index(args.idx)
    with open(args.eval, encoding="utf-8") as fh:
        texts = [corpus._unescape(line.rstrip("\n")) for line in fh if line.strip()]
    thresholds = [int(t) for t in args.threshold.split(",") if t]
    results = [ngram.overlap(texts, idx, threshold=t, unique=args.unique)
               for t in thresholds]
    header = "k,n_short_pct," + ",".join(f"O_{t}" for t in thresholds)
    row = (
        f"{idx.k},{results[0].short_text_pct:.4f},"
        + ",".join(f"{r.overlap_pct:.4f}" for r in results)
    )
    _write(args.out, header + "\n" + row + "\n")
    return 0


def cmd_finetune(args) -> int:
    ckpt = model.load_checkpoint(args.ckpt)
    vocab = tokenizer.load_vocab(args.vocab)
    spec = tasks.get_task(args.task)
    datapoints = tasks.load_datapoints(args.data)
    tc = _training_config(args)
    vocab2, checkpoints = tasks.finetune(ckpt, vocab, spec, datapoints, tc)
    os.makedirs(args.out, exist_ok=True)
    tokenizer.save_vocab(os.path.join(args.out, "vocab.txt"), vocab2)
    for epoch, ck in enumerate(checkpoints, start=1):
        epoch_dir = os.path.join(args.out, f"ckpt-epoch{epoch:02d}")
        os.makedirs(epoch_dir, exist_ok=True)
        model.save_checkpoint(os.path.join(epoch_dir, "model.ckpt"), ck)
    print(f"fine-tuned {spec.name} for {len(checkpoints)} epochs under {args.out}")
    return 0


def cmd_eval_task(args) -> int:
    ckpt = model.load_checkpoint(args.ckpt)
    vocab = tokenizer.load_vocab(args.vocab)
    spec = tasks.get_task(args.task)
    datapoints = tasks.load_datapoints(args.data)
    result = tasks.evaluate(
        ckpt, vocab, spec, datapoints, max_new_tokens=args.max_new_tokens
    )
    rows = [
        (spec.name, args.epoch, metric, value, result.n_missing_pct)
        for metric, value in result.metrics.items()
    ]
    _write(args.out, tasks.results_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlkit",
        description="Controllable language modeling toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_required=False):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", required=out_required, default=None)

    p = sub.add_parser("train-tokenizer", help="learn a BPE vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--fraction", type=float, default=1 / 3)
    p.add_argument("--table", default="auto")
    common(p, out_required=True)
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("train", help="pretrain on OCC+text+ECC sequences")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--table", default="auto")
    p.add_argument("--config", default=None, help="key=value training config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--arch", choices=["custom", "full"], default="custom")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--inner", type=int, default=64)
    p.add_argument("--context", type=int, default=48)
    common(p, out_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample text for a category")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--occ", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--preset", choices=sorted(sampler.PRESETS), default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--rep-penalty", type=float, default=None)
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--num", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("grid", help="hyper-parameter grid search")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--categories", required=True)
    p.add_argument("--texts-per-cell", type=int, default=10)
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--idx", default=None)
    p.add_argument("--p-grid", default="0.7,0.8,0.9,1.0")
    p.add_argument("--t-grid", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--r-grid", default="1.0,1.2,1.4,1.6,1.8,2.0")
    common(p, out_required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("perplexity", help="sliding-window perplexity")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text-file", required=True)
    p.add_argument("--window", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_perplexity)

    p = sub.add_parser("index-build", help="build a k-gram index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=ngram.DEFAULT_K)
    p.add_argument("--table", default="auto")
    common(p, out_required=True)
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("index-search", help="substring search in the index")
    p.add_argument("--idx", required=True)
    p.add_argument("--query", required=True)
    common(p)
    p.set_defaults(func=cmd_index_search)

    p = sub.add_parser("index-overlap", help="k-gram overlap statistics")
    p.add_argument("--idx", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--threshold", default="1,10,100")
    p.add_argument("--unique", action="store_true")
    common(p)
    p.set_defaults(func=cmd_index_overlap)

    p = sub.add_parser("finetune", help="fine-tune on a benchmark task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    common(p, out_required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval-task", help="score a fine-tuned model on a task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-new-tokens", type=int, default=32)
    p.add_argument("--epoch", default="-")
    common(p)
    p.set_defaults(func=cmd_eval_task)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parseable error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
