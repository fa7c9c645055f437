"""Diagnostic analyses: p_gen histogram, per-word probability traces, and
system-vs-system novelty comparison, all emitted as small CSV files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import EncodedExample, Vocabulary, decode_ext_ids
from .decoding import Hypothesis
from .metrics import corpus_report

N_BINS = 10


@dataclass
class PgenHistogram:
    """p_gen values bucketed into ten width-0.1 bins over [0, 1]."""

    edges: list[float]      # 11 boundaries, 0.0 .. 1.0
    fractions: list[float]  # per-bin share, sums to 1
    counts: list[int]
    total: int

    def __post_init__(self):
        if len(self.fractions) != N_BINS or len(self.counts) != N_BINS:
            raise ValueError("histogram must have exactly 10 bins")
        if self.total <= 0:
            raise ValueError("histogram needs at least one step")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("bin fractions must sum to 1")


def _pgen_value(item) -> float:
    if hasattr(item, "p_gen"):
        item = item.p_gen
    if hasattr(item, "item"):
        item = item.item()
    return float(item)


def pgen_histogram(steps: Iterable) -> PgenHistogram:
    """Bin every step's p_gen; accepts traces or bare floats.

    A value x lands in bin min(int(10 * x), 9), so 1.0 joins the last bin
    rather than opening an eleventh.
    """
    counts = [0] * N_BINS
    total = 0
    for item in steps:
        p = _pgen_value(item)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p_gen value {p} outside [0, 1]")
        counts[min(int(p * N_BINS), N_BINS - 1)] += 1
        total += 1
    if total == 0:
        raise ValueError("pgen_histogram: no decode steps")
    return PgenHistogram(edges=[i / N_BINS for i in range(N_BINS + 1)],
                         fractions=[c / total for c in counts],
                         counts=counts, total=total)


@dataclass
class WordTraceRow:
    """Where one emitted word's probability came from at its step."""

    step: int
    token: str
    p_vocab: float  # generation-path mass on the word (0 for OOV ids)
    p_attn: float   # attention mass summed over the word's source positions
    p_gen: float

    def __post_init__(self):
        for v in (self.p_vocab, self.p_attn, self.p_gen):
            if not 0.0 <= v <= 1.0 + 1e-9:
                raise ValueError(f"probability {v} outside [0, 1]")


def word_trace(example: EncodedExample, hypothesis: Hypothesis,
               vocab: Vocabulary) -> list[WordTraceRow]:
    """One row per emitted token, in emission order."""
    vocab_size = vocab.size
    rows = []
    for t, tid in enumerate(hypothesis.token_ids):
        trace = hypothesis.traces[t]
        word = decode_ext_ids([tid], vocab, example.source_oovs)[0]
        p_vocab = float(trace.p_vocab.data[tid]) if tid < vocab_size else 0.0
        positions = [i for i, e in enumerate(example.source_ext_ids) if e == tid]
        p_attn = float(trace.attention.data[positions].sum()) if positions else 0.0
        rows.append(WordTraceRow(step=t, token=word, p_vocab=p_vocab,
                                 p_attn=p_attn, p_gen=_pgen_value(trace)))
    return rows


def novelty_comparison(systems: Sequence[tuple[str, Sequence[Sequence[str]]]],
                       sources: Sequence[Sequence[str]],
                       sample_size: int, seed: int) -> list[dict]:
    """Unigram/bigram novelty per system over one shared seeded sample.

    ``systems`` pairs a label with that system's generated summaries,
    aligned index-by-index with ``sources``.
    """
    rows = []
    for label, gens in systems:
        if len(gens) != len(sources):
            raise ValueError(f"system {label!r}: {len(gens)} summaries for "
                             f"{len(sources)} sources")
        pairs = [(g, s, g) for g, s in zip(gens, sources)]
        rep = corpus_report(pairs, sample_size, seed, orders=(1, 2))
        rows.append({"system": label,
                     "unigram_novelty": rep.novelty[1],
                     "bigram_novelty": rep.novelty[2]})
    return rows


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def write_pgen_hist_csv(path: str, hist: PgenHistogram) -> None:
    # The count column is redundant with fraction*total but spares
    # consumers the reconstruction arithmetic.
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "fraction", "count"])
        for i in range(N_BINS):
            w.writerow([f"{hist.edges[i]:.1f}", f"{hist.edges[i + 1]:.1f}",
                        repr(hist.fractions[i]), hist.counts[i]])


def write_word_trace_csv(path: str, rows: Sequence[WordTraceRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "token", "p_vocab", "p_attn", "p_gen"])
        for r in rows:
            w.writerow([r.step, r.token, repr(r.p_vocab), repr(r.p_attn),
                        repr(r.p_gen)])


def write_novelty_compare_csv(path: str, rows: Sequence[dict]) -> None:
    # A novelty of None (every sampled output too short for the order)
    # becomes an empty cell.
    def cell(value):
        return "" if value is None else repr(float(value))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "unigram_novelty", "bigram_novelty"])
        for r in rows:
            w.writerow([r["system"], cell(r["unigram_novelty"]),
                        cell(r["bigram_novelty"])])
