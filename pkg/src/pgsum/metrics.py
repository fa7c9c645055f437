"""N-gram novelty and ROUGE-1/2/L, with corpus-level aggregation.

Novelty of order n is the fraction of a summary's unique n-grams that do
not appear in its source, on a 0-100 scale; it is undefined (None) when
the summary has no n-grams at all, and such pairs are excluded from
corpus averages but counted. ROUGE here is the plain full-length F1
variant: lowercased tokens, no stemming, no stopword removal, so scores
are comparable within this codebase rather than to official tooling.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ORDER_NAMES = {1: "unigram", 2: "bigram", 3: "trigram"}


def order_name(n: int) -> str:
    return ORDER_NAMES.get(n, f"{n}gram")


@dataclass(frozen=True)
class NGramSet:
    n: int
    grams: frozenset

    def __len__(self) -> int:
        return len(self.grams)


def ngram_set(tokens: Sequence[str], n: int) -> NGramSet:
    """Unique contiguous n-grams of the token sequence."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    toks = list(tokens)
    grams = frozenset(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))
    return NGramSet(n, grams)


def novelty(gen_tokens: Sequence[str], src_tokens: Sequence[str],
            n: int) -> float | None:
    """Percentage of the summary's unique n-grams absent from the source.

    Both the numerator (set difference) and denominator are set
    cardinalities. Returns None when the summary has no n-grams.
    """
    gen = ngram_set(gen_tokens, n)
    if not gen.grams:
        return None
    src = ngram_set(src_tokens, n)
    return 100.0 * len(gen.grams - src.grams) / len(gen.grams)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    toks = list(tokens)
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def _f1(overlap: float, cand_total: float, ref_total: float) -> float:
    if cand_total == 0 or ref_total == 0 or overlap == 0:
        return 0.0
    p = overlap / cand_total
    r = overlap / ref_total
    return 100.0 * 2.0 * p * r / (p + r)


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    """Clipped n-gram overlap F1 on the 0-100 scale."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    cand = _ngram_counts(candidate, n)
    ref = _ngram_counts(reference, n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via the standard two-row DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Longest-common-subsequence F1 over full token sequences, 0-100."""
    L = lcs_length(list(candidate), list(reference))
    return _f1(L, len(candidate), len(reference))


@dataclass
class MetricsReport:
    """Corpus-averaged metrics; novelty entries are None when every
    sampled pair was too short for that order."""

    sample_count: int
    novelty: dict[int, float | None]
    novelty_skipped: dict[int, int]
    rouge_1: float
    rouge_2: float
    rouge_l: float

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        values = [v for v in self.novelty.values() if v is not None]
        values += [self.rouge_1, self.rouge_2, self.rouge_l]
        for v in values:
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"metric value {v} outside [0, 100]")

    def to_dict(self) -> dict[str, float | int | None]:
        out: dict[str, float | int | None] = {"sample_count": self.sample_count}
        for n in sorted(self.novelty):
            out[f"{order_name(n)}_novelty"] = self.novelty[n]
            out[f"{order_name(n)}_novelty_skipped"] = self.novelty_skipped[n]
        out["rouge_1"] = self.rouge_1
        out["rouge_2"] = self.rouge_2
        out["rouge_l"] = self.rouge_l
        return out


def pair_metrics(gen: Sequence[str], src: Sequence[str], ref: Sequence[str],
                 orders: Sequence[int] = (1, 2, 3)) -> dict:
    """All metrics for one (generated, source, reference) triple."""
    row: dict = {}
    for n in orders:
        row[f"{order_name(n)}_novelty"] = novelty(gen, src, n)
    row["rouge_1"] = rouge_n(gen, ref, 1)
    row["rouge_2"] = rouge_n(gen, ref, 2)
    row["rouge_l"] = rouge_l(gen, ref)
    return row


def corpus_report(pairs: Iterable[tuple[Sequence[str], Sequence[str], Sequence[str]]],
                  sample_size: int, seed: int,
                  orders: Sequence[int] = (1, 2, 3)) -> MetricsReport:
    """Metrics averaged over a seeded uniform sample without replacement."""
    pool = list(pairs)
    if not pool:
        raise ValueError("corpus_report: empty corpus")
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    if sample_size > len(pool):
        raise ValueError(f"sample_size {sample_size} exceeds corpus size {len(pool)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size=sample_size, replace=False)

    nov_sums = {n: 0.0 for n in orders}
    nov_counts = {n: 0 for n in orders}
    skipped = {n: 0 for n in orders}
    r1 = r2 = rl = 0.0
    for i in chosen:
        gen, src, ref = pool[int(i)]
        for n in orders:
            v = novelty(gen, src, n)
            if v is None:
                skipped[n] += 1
            else:
                nov_sums[n] += v
                nov_counts[n] += 1
        r1 += rouge_n(gen, ref, 1)
        r2 += rouge_n(gen, ref, 2)
        rl += rouge_l(gen, ref)

    return MetricsReport(
        sample_count=sample_size,
        novelty={n: (nov_sums[n] / nov_counts[n] if nov_counts[n] else None)
                 for n in orders},
        novelty_skipped=skipped,
        rouge_1=r1 / sample_size,
        rouge_2=r2 / sample_size,
        rouge_l=rl / sample_size,
    )
