"""Command-line interface: build-vocab, train, summarize, evaluate, diagnose.

Every subcommand reads the layered configuration (built-in defaults, then
--config file, then explicit flags) and exits 0 on success, 1 on data or
configuration errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .config import load_config, model_config, resolve, save_config, train_config
from .data import (build_vocab, count_corpus, encode_example, load_dataset,
                   load_vocab_file, save_vocab_file, tokenize)
from .decoding import beam_search, render
from .diagnostics import (novelty_comparison, pgen_histogram, word_trace,
                          write_novelty_compare_csv, write_pgen_hist_csv,
                          write_word_trace_csv)
from .metrics import corpus_report, pair_metrics
from .model import load_checkpoint
from .training import run_training


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgsum",
        description="Pointer-generator summarizer with an OOV generation penalty")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="random seed override")
        p.add_argument("--out", default=".", help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="model checkpoint")
            p.add_argument("--vocab", required=True, help="vocabulary file")
            p.add_argument("--beam-size", type=int, help="beam width override")
            p.add_argument("--max-len", type=int, help="decode length cap override")

    def dataset_args(p):
        p.add_argument("data", help="dataset path (jsonl, or article lines)")
        p.add_argument("--format", choices=["jsonl", "text-pair"], default="jsonl")
        p.add_argument("--summaries", help="summary file for text-pair format")

    p = sub.add_parser("build-vocab", help="count words and write a vocab file")
    dataset_args(p)
    common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="run the three-phase training schedule")
    dataset_args(p)
    common(p)
    p.add_argument("--vocab", help="existing vocab file (default: build from data)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", help="decode summaries for a dataset")
    dataset_args(p)
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="novelty and ROUGE over a corpus")
    p.add_argument("--gen", required=True, help="generated summaries, one line each")
    p.add_argument("--data", help="jsonl dataset giving sources and references")
    p.add_argument("--src", help="source token lines (with --ref)")
    p.add_argument("--ref", help="reference token lines (with --src)")
    p.add_argument("--sample-size", type=int, help="pairs to sample")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="p_gen histogram, word traces, novelty table")
    dataset_args(p)
    common(p, checkpoint=True)
    p.add_argument("--baseline-checkpoint",
                   help="second checkpoint to compare novelty against")
    p.add_argument("--sample-size", type=int, help="examples to sample")
    p.set_defaults(func=cmd_diagnose)
    return parser


def _settings(args) -> dict:
    file_cfg = load_config(args.config) if args.config else None
    overrides = {}
    for flag, key in (("seed", "seed"), ("sample_size", "sample_size"),
                      ("beam_size", "beam_size")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return resolve(file_cfg, overrides)


def _load_pairs(args) -> list[tuple[list[str], list[str]]]:
    return list(load_dataset(args.data, fmt=args.format,
                             summary_path=args.summaries))


def _encode_all(pairs, vocab, cfg):
    return [encode_example(a, s, vocab, int(cfg["max_encoder_len"]),
                           int(cfg["max_decoder_len"])) for a, s in pairs]


def _uses_coverage(checkpoint_path: str) -> bool:
    # The sidecar records which phase produced the checkpoint; only
    # vanilla-phase models attend without coverage.
    meta_path = checkpoint_path + ".meta"
    if os.path.exists(meta_path):
        for line in open(meta_path, encoding="utf-8"):
            key, _, value = line.partition("=")
            if key.strip() == "phase":
                return value.strip() != "vanilla"
    return True


def _read_token_lines(path: str) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh]


def cmd_build_vocab(args) -> int:
    pairs = _load_pairs(args)
    counted = count_corpus([a + s for a, s in pairs])
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "vocab.txt")
    save_vocab_file(out_path, counted)
    print(f"wrote {len(counted)} words to {out_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _settings(args)
    pairs = _load_pairs(args)
    if args.vocab:
        vocab = load_vocab_file(args.vocab, int(cfg["vocab_size"]))
    else:
        vocab = build_vocab([a + s for a, s in pairs], int(cfg["vocab_size"]))
    mcfg = model_config({**cfg, "vocab_size": vocab.size})
    examples = _encode_all(pairs, vocab, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_vocab_file(os.path.join(args.out, "vocab.txt"),
                    count_corpus([a + s for a, s in pairs]))
    save_config(os.path.join(args.out, "run_config.txt"),
                {**cfg, "vocab_size": vocab.size})
    _, log_path = run_training(examples, mcfg, train_config(cfg), args.out)
    print(f"training complete: {os.path.join(args.out, 'final.ckpt')} "
          f"(log: {log_path})")
    return 0


def _decode_corpus(examples, vocab, params, beam_size, max_len, use_coverage):
    out = []
    for ex in examples:
        hyp = beam_search(ex, vocab, params, beam_size=beam_size,
                          max_len=max_len, use_coverage=use_coverage)
        out.append((render(hyp, ex, vocab), hyp))
    return out


def cmd_summarize(args) -> int:
    cfg = _settings(args)
    params = load_checkpoint(args.checkpoint)
    vocab = load_vocab_file(args.vocab, params.config.vocab_size)
    if vocab.size != params.config.vocab_size:
        raise ValueError(f"vocab file yields {vocab.size} words but checkpoint "
                         f"expects {params.config.vocab_size}")
    pairs = _load_pairs(args)
    examples = _encode_all(pairs, vocab, cfg)
    max_len = args.max_len or int(cfg["max_decoder_len"])
    decoded = _decode_corpus(examples, vocab, params, int(cfg["beam_size"]),
                             max_len, _uses_coverage(args.checkpoint))
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "summaries.txt")
    with open(out_path, "w", encoding="utf-8") as fh:
        for tokens, _ in decoded:
            fh.write(" ".join(tokens) + "\n")
    print(f"wrote {len(decoded)} summaries to {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _settings(args)
    gens = _read_token_lines(args.gen)
    if args.data:
        pairs = list(load_dataset(args.data))
        sources = [a for a, _ in pairs]
        refs = [s for _, s in pairs]
    elif args.src and args.ref:
        sources = _read_token_lines(args.src)
        refs = _read_token_lines(args.ref)
    else:
        raise ValueError("evaluate needs --data, or both --src and --ref")
    if not len(gens) == len(sources) == len(refs):
        raise ValueError(f"misaligned corpora: {len(gens)} generated, "
                         f"{len(sources)} sources, {len(refs)} references")
    triples = list(zip(gens, sources, refs))
    sample_size = min(int(cfg["sample_size"]), len(triples))
    report = corpus_report(triples, sample_size, int(cfg["seed"]))

    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "metrics.txt")
    save_config(report_path, report.to_dict())
    rows_path = os.path.join(args.out, "per_sample.csv")
    chosen = np.random.default_rng(int(cfg["seed"])).choice(
        len(triples), size=sample_size, replace=False)
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["pair_index", "unigram_novelty", "bigram_novelty",
                  "trigram_novelty", "rouge_1", "rouge_2", "rouge_l"]
        writer.writerow(header)
        for i in chosen:
            g, s, r = triples[int(i)]
            row = pair_metrics(g, s, r)
            writer.writerow([int(i)] + [row[k] for k in header[1:]])
    for key, value in report.to_dict().items():
        print(f"{key} = {value}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _settings(args)
    params = load_checkpoint(args.checkpoint)
    vocab = load_vocab_file(args.vocab, params.config.vocab_size)
    pairs = _load_pairs(args)
    examples = _encode_all(pairs, vocab, cfg)
    seed = int(cfg["seed"])
    sample_size = min(int(cfg["sample_size"]), len(examples))
    chosen = np.random.default_rng(seed).choice(len(examples), size=sample_size,
                                                replace=False)
    sampled = [examples[int(i)] for i in chosen]
    sampled_sources = [pairs[int(i)][0] for i in chosen]
    refs = [pairs[int(i)][1] for i in chosen]
    beam_size = int(cfg["beam_size"])
    max_len = args.max_len or int(cfg["max_decoder_len"])

    decoded = _decode_corpus(sampled, vocab, params, beam_size, max_len,
                             _uses_coverage(args.checkpoint))
    os.makedirs(args.out, exist_ok=True)

    all_traces = [tr for _, hyp in decoded for tr in hyp.traces]
    write_pgen_hist_csv(os.path.join(args.out, "pgen_hist.csv"),
                        pgen_histogram(all_traces))
    write_word_trace_csv(os.path.join(args.out, "word_trace.csv"),
                         word_trace(sampled[0], decoded[0][1], vocab))

    systems = [("model", [tokens for tokens, _ in decoded]),
               ("ground_truth", refs)]
    if args.baseline_checkpoint:
        base_params = load_checkpoint(args.baseline_checkpoint)
        base = _decode_corpus(sampled, vocab, base_params, beam_size, max_len,
                              _uses_coverage(args.baseline_checkpoint))
        systems.insert(0, ("baseline", [tokens for tokens, _ in base]))
    rows = novelty_comparison(systems, sampled_sources,
                              sample_size=len(sampled), seed=seed)
    write_novelty_compare_csv(os.path.join(args.out, "novelty_compare.csv"), rows)
    print(f"wrote pgen_hist.csv, word_trace.csv, novelty_compare.csv to {args.out}")
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, IndexError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
