import itertools

import numpy as np
import pytest

from pgsum.metrics import (MetricsReport, corpus_report, lcs_length,
                           ngram_set, novelty, pair_metrics, rouge_l, rouge_n)


def test_ngram_set_dedup():
    s = ngram_set(["a", "b", "a", "b"], 2)
    assert s.grams == {("a", "b"), ("b", "a")}
    assert s.n == 2 and len(s) == 2


def test_ngram_set_short_input_empty():
    assert ngram_set(["a"], 2).grams == frozenset()
    assert ngram_set([], 1).grams == frozenset()


def test_ngram_set_unigrams():
    assert ngram_set(["a", "b", "c"], 1).grams == {("a",), ("b",), ("c",)}
    with pytest.raises(ValueError):
        ngram_set(["a"], 0)


def test_novelty_verbatim_subset_is_zero():
    src = "the cat sat on the mat".split()
    assert novelty(["the", "cat"], src, 1) == 0.0
    assert novelty(["the", "cat", "sat"], src, 2) == 0.0


def test_novelty_hand_computed():
    src = "the cat sat on the mat".split()
    gen = "a cat slept".split()
    # gen unigrams {a, cat, slept}; {a, slept} are novel.
    val = novelty(gen, src, 1)
    assert val == pytest.approx(200.0 / 3.0, abs=1e-4)
    assert round(val, 4) == 66.6667


def test_novelty_disjoint_is_hundred():
    assert novelty(["x", "y"], ["a", "b"], 1) == 100.0
    assert novelty(["x", "y"], ["a", "b"], 2) == 100.0


def test_novelty_undefined_for_short_gen():
    assert novelty(["a"], ["a", "b"], 2) is None
    assert novelty([], ["a", "b"], 1) is None


def test_novelty_monotone_in_source_presence():
    # Appending an n-gram already present in the source never raises the
    # novel-gram count.
    rng = np.random.default_rng(0)
    alpha = ["a", "b", "c", "d"]
    for _ in range(50):
        src = [alpha[i] for i in rng.integers(4, size=8)]
        gen = [alpha[i] for i in rng.integers(4, size=4)]
        n = int(rng.integers(1, 3))
        base = ngram_set(gen, n).grams - ngram_set(src, n).grams
        start = int(rng.integers(len(src) - n + 1))
        extended = gen + src[start:start + n]
        ext = ngram_set(extended, n).grams - ngram_set(src, n).grams
        # The copied gram itself is not novel; only the junction grams
        # could be new, and the pure source gram never is.
        assert ngram_set(src[start:start + n], n).grams <= ngram_set(src, n).grams
        assert len(ext - base) <= n - 1 if n > 1 else ext == base


def test_rouge_n_identical_is_hundred():
    toks = "the cat sat".split()
    assert rouge_n(toks, toks, 1) == pytest.approx(100.0)
    assert rouge_n(toks, toks, 2) == pytest.approx(100.0)


def test_rouge_n_hand_computed():
    cand = "the cat sat".split()
    ref = "the cat slept".split()
    assert rouge_n(cand, ref, 1) == pytest.approx(200.0 / 3.0, abs=1e-4)
    assert round(rouge_n(cand, ref, 1), 4) == 66.6667
    assert rouge_n(cand, ref, 2) == pytest.approx(50.0, abs=1e-9)


def test_rouge_n_clipping_and_empties():
    # Candidate repeats a word: overlap clips at the reference count.
    assert rouge_n(["a", "a", "a"], ["a", "b"], 1) == pytest.approx(
        100.0 * 2 * (1 / 3) * (1 / 2) / (1 / 3 + 1 / 2), abs=1e-9)
    assert rouge_n([], ["a"], 1) == 0.0
    assert rouge_n(["a"], [], 1) == 0.0
    assert rouge_n(["a"], ["b"], 1) == 0.0
    with pytest.raises(ValueError):
        rouge_n(["a"], ["b"], 0)


def test_rouge_n_f1_symmetric_under_swap():
    rng = np.random.default_rng(1)
    alpha = list("abcde")
    for _ in range(30):
        c = [alpha[i] for i in rng.integers(5, size=int(rng.integers(1, 7)))]
        r = [alpha[i] for i in rng.integers(5, size=int(rng.integers(1, 7)))]
        for n in (1, 2):
            assert rouge_n(c, r, n) == pytest.approx(rouge_n(r, c, n), abs=1e-9)


def test_rouge_l_identical_and_disjoint():
    toks = "x y z".split()
    assert rouge_l(toks, toks) == pytest.approx(100.0)
    assert rouge_l(["a", "b"], ["c", "d"]) == 0.0
    assert rouge_l([], ["a"]) == 0.0


def test_rouge_l_hand_computed():
    cand = "the cat sat".split()
    ref = "the cat slept".split()
    # LCS "the cat": P = R = 2/3.
    assert rouge_l(cand, ref) == pytest.approx(200.0 / 3.0, abs=1e-4)
    assert round(rouge_l(cand, ref), 4) == 66.6667


def subsequence_lengths(seq):
    """All subsequence lengths present, bucketed: length -> set of tuples."""
    out = {}
    for k in range(len(seq) + 1):
        out[k] = {tuple(seq[i] for i in idx)
                  for idx in itertools.combinations(range(len(seq)), k)}
    return out


def oracle_lcs(a, b):
    sa, sb = subsequence_lengths(a), subsequence_lengths(b)
    for k in range(min(len(a), len(b)), 0, -1):
        if sa[k] & sb[k]:
            return k
    return 0


def test_lcs_matches_exhaustive_oracle_small():
    # Full length-6 sweep lives in the acceptance suite; spot-check up to
    # length 4 here to keep this module fast.
    alpha = "abc"
    seqs = [list(s) for k in range(5) for s in itertools.product(alpha, repeat=k)]
    for a in seqs:
        for b in seqs:
            assert lcs_length(a, b) == oracle_lcs(a, b), (a, b)


def test_lcs_at_least_longest_common_substring():
    rng = np.random.default_rng(5)
    alpha = list("abc")
    for _ in range(100):
        a = [alpha[i] for i in rng.integers(3, size=6)]
        b = [alpha[i] for i in rng.integers(3, size=6)]
        common_sub = 0
        for i in range(len(a)):
            for j in range(i + 1, len(a) + 1):
                needle = a[i:j]
                for k in range(len(b) - len(needle) + 1):
                    if b[k:k + len(needle)] == needle:
                        common_sub = max(common_sub, len(needle))
        assert lcs_length(a, b) >= common_sub


def test_pair_metrics_keys():
    row = pair_metrics(["a", "b"], ["a", "c"], ["a", "b"])
    assert row["unigram_novelty"] == pytest.approx(50.0)
    assert row["trigram_novelty"] is None
    assert row["rouge_1"] == pytest.approx(100.0)


def test_corpus_report_single_pair():
    gen, src, ref = ["a", "cat"], ["a", "dog"], ["a", "cat"]
    rep = corpus_report([(gen, src, ref)], sample_size=1, seed=0)
    assert rep.sample_count == 1
    assert rep.novelty[1] == pytest.approx(novelty(gen, src, 1))
    assert rep.novelty[2] == pytest.approx(novelty(gen, src, 2))
    assert rep.rouge_1 == pytest.approx(rouge_n(gen, ref, 1))
    assert rep.rouge_l == pytest.approx(rouge_l(gen, ref))
    d = rep.to_dict()
    assert d["unigram_novelty"] == rep.novelty[1]
    assert d["sample_count"] == 1


def test_corpus_report_gen_equals_src():
    pairs = [(t, t, t) for t in (["a", "b", "c"], ["x", "y"], ["p", "q", "r"])]
    rep = corpus_report(pairs, sample_size=3, seed=1)
    assert rep.novelty[1] == 0.0
    assert rep.novelty[2] == 0.0
    assert rep.rouge_1 == pytest.approx(100.0)


def test_corpus_report_skips_short_pairs():
    pairs = [(["a"], ["a", "b"], ["a"]), (["a", "b", "c"], ["a", "b"], ["a", "b"])]
    rep = corpus_report(pairs, sample_size=2, seed=0)
    assert rep.novelty_skipped[2] == 1
    assert rep.novelty_skipped[3] == 1
    assert rep.novelty[3] == pytest.approx(100.0)  # source has no trigrams
    assert rep.novelty[2] == pytest.approx(novelty(["a", "b", "c"], ["a", "b"], 2))

    both_short = [(["a"], ["a", "b"], ["a"]), (["b"], ["a", "b"], ["b"])]
    rep2 = corpus_report(both_short, sample_size=2, seed=0)
    assert rep2.novelty[2] is None and rep2.novelty_skipped[2] == 2


def test_corpus_report_deterministic_and_validates():
    rng = np.random.default_rng(7)
    alpha = list("abcdef")
    pairs = []
    for _ in range(30):
        mk = lambda k: [alpha[i] for i in rng.integers(6, size=k)]
        pairs.append((mk(4), mk(8), mk(4)))
    a = corpus_report(pairs, sample_size=10, seed=42)
    b = corpus_report(pairs, sample_size=10, seed=42)
    assert a == b
    c = corpus_report(pairs, sample_size=10, seed=43)
    assert a != c  # different sample under a different seed
    with pytest.raises(ValueError):
        corpus_report([], 1, 0)
    with pytest.raises(ValueError):
        corpus_report(pairs, sample_size=31, seed=0)
    with pytest.raises(ValueError):
        corpus_report(pairs, sample_size=0, seed=0)


def test_metrics_report_validation():
    with pytest.raises(ValueError):
        MetricsReport(0, {1: 1.0}, {1: 0}, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        MetricsReport(1, {1: 101.0}, {1: 0}, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        MetricsReport(1, {1: 1.0}, {1: 0}, -0.1, 1.0, 1.0)
