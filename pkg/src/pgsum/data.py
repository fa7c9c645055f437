"""Tokenization, vocabulary, extended-vocab encoding, batching, dataset I/O.

Extended-vocabulary convention: each distinct out-of-vocabulary word in a
source article gets a temporary id vocab_size+i (i = order of first
appearance). Those ids exist only relative to that example's
``source_oovs`` list; they let the copy mechanism place probability on
words the fixed vocabulary cannot express.
"""

from __future__ import annotations

import json
from collections import Counter
from itertools import zip_longest
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
START_TOKEN = "[START]"
STOP_TOKEN = "[STOP]"
RESERVED = (PAD_TOKEN, UNK_TOKEN, START_TOKEN, STOP_TOKEN)

PAD_ID = 0
UNK_ID = 1
START_ID = 2
STOP_ID = 3


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace.

    Corpora are assumed pre-tokenized (punctuation already separated), so
    no further normalization happens here.
    """
    return text.lower().split()


class Vocabulary:
    """Fixed word list with dense ids; reserved tokens occupy ids 0-3."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if words[:4] != list(RESERVED):
            raise ValueError("vocabulary must start with the four reserved tokens")
        self.words: list[str] = words
        self.index: dict[str, int] = {w: i for i, w in enumerate(words)}
        if len(self.index) != len(words):
            raise ValueError("duplicate word in vocabulary")

    @property
    def size(self) -> int:
        return len(self.words)

    def id_of(self, word: str) -> int:
        """Id of ``word``, or UNK_ID if absent."""
        return self.index.get(word, UNK_ID)

    def word_of(self, i: int) -> str:
        if not 0 <= i < len(self.words):
            raise IndexError(f"id {i} out of range for vocabulary of size {self.size}")
        return self.words[i]

    def __contains__(self, word: str) -> bool:
        return word in self.index


def count_corpus(corpus: Iterable[Sequence[str]]) -> list[tuple[str, int]]:
    """(word, count) pairs, most frequent first, ties by first occurrence."""
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    for r in RESERVED:
        counts.pop(r, None)
    # sorted() is stable, so equal counts keep first-occurrence order.
    return sorted(counts.items(), key=lambda kv: -kv[1])


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Reserved tokens plus the max_size-4 most frequent corpus words."""
    if max_size <= 4:
        raise ValueError(f"max_size must exceed 4 (reserved tokens), got {max_size}")
    ranked = count_corpus(corpus)
    words = list(RESERVED) + [w for w, _ in ranked[:max_size - 4]]
    return Vocabulary(words)


def save_vocab_file(path: str, counted_words: Sequence[tuple[str, int]]) -> None:
    """Write `word count` lines, most frequent first (reserved tokens omitted)."""
    with open(path, "w", encoding="utf-8") as fh:
        for word, count in counted_words:
            fh.write(f"{word} {count}\n")


def load_vocab_file(path: str, max_size: int) -> Vocabulary:
    """Build a Vocabulary from a `word count` file (already frequency-sorted)."""
    if max_size <= 4:
        raise ValueError(f"max_size must exceed 4 (reserved tokens), got {max_size}")
    words = list(RESERVED)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if len(words) >= max_size:
                break
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'word count', got {line!r}")
            if parts[0] in RESERVED:
                continue
            words.append(parts[0])
    return Vocabulary(words)


@dataclass
class EncodedExample:
    """One article/summary pair in id space.

    target_ids is the decoder input ([START] + summary, UNK for OOV);
    target_ext_ids is what the decoder should predict at each step
    (summary in extended ids, then [STOP]). Both have the same length, as
    does oov_flags (y_oov per predicted position; the STOP position is
    always in-vocabulary).
    """

    source_ids: list[int]
    source_ext_ids: list[int]
    source_oovs: list[str]
    target_ids: list[int]
    target_ext_ids: list[int]
    oov_flags: list[bool]


def encode_example(article: Sequence[str], summary: Sequence[str],
                   vocab: Vocabulary, max_encoder_len: int,
                   max_decoder_len: int) -> EncodedExample:
    """Encode a tokenized pair against ``vocab`` with extended source ids."""
    if max_encoder_len <= 0 or max_decoder_len <= 0:
        raise ValueError("length limits must be positive")
    article = list(article)[:max_encoder_len]
    summary = list(summary)[:max_decoder_len]
    if not article:
        raise ValueError("empty article: nothing to attend over")

    source_ids: list[int] = []
    source_ext_ids: list[int] = []
    source_oovs: list[str] = []
    oov_index: dict[str, int] = {}
    for w in article:
        i = vocab.id_of(w)
        source_ids.append(i)
        if i == UNK_ID and w != UNK_TOKEN:
            if w not in oov_index:
                oov_index[w] = vocab.size + len(source_oovs)
                source_oovs.append(w)
            source_ext_ids.append(oov_index[w])
        else:
            source_ext_ids.append(i)

    target_ids = [START_ID]
    target_ext_ids: list[int] = []
    oov_flags: list[bool] = []
    for w in summary:
        i = vocab.id_of(w)
        target_ids.append(i)
        if i == UNK_ID and w != UNK_TOKEN:
            target_ext_ids.append(oov_index.get(w, UNK_ID))
            oov_flags.append(True)
        else:
            target_ext_ids.append(i)
            oov_flags.append(False)
    target_ext_ids.append(STOP_ID)
    oov_flags.append(False)

    return EncodedExample(source_ids, source_ext_ids, source_oovs,
                          target_ids, target_ext_ids, oov_flags)


def decode_ext_ids(ids: Sequence[int], vocab: Vocabulary,
                   source_oovs: Sequence[str]) -> list[str]:
    """Map extended ids back to words, resolving copies via source_oovs."""
    out = []
    for i in ids:
        if i < vocab.size:
            out.append(vocab.word_of(i))
        else:
            j = i - vocab.size
            if j >= len(source_oovs):
                raise IndexError(f"extended id {i} has no source OOV entry")
            out.append(source_oovs[j])
    return out


@dataclass
class Batch:
    """Padded id arrays for a group of examples.

    The original EncodedExample objects ride along untouched; padding is
    purely a view for array-style consumers, and every padded position is
    False in the corresponding mask.
    """

    source: np.ndarray          # [B, Ls] vocab ids, PAD-filled
    source_ext: np.ndarray      # [B, Ls] extended ids, PAD-filled
    source_lengths: np.ndarray  # [B]
    source_mask: np.ndarray     # [B, Ls] bool
    target_in: np.ndarray       # [B, Lt] decoder input ids
    target_out: np.ndarray      # [B, Lt] extended target ids
    target_lengths: np.ndarray  # [B]
    target_mask: np.ndarray     # [B, Lt] bool
    oov_flags: np.ndarray       # [B, Lt] bool
    max_ext_size: int           # vocab size + most source OOVs in the batch
    examples: list[EncodedExample] = field(repr=False, default_factory=list)


def _pad_rows(rows: list[list[int]], fill: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = True
    return out, mask


def make_batches(examples: Iterable[EncodedExample], batch_size: int,
                 seed: int, vocab_size: int) -> Iterator[Batch]:
    """Shuffle with ``seed``, then yield padded batches of ``batch_size``.

    The final batch may be smaller. Fixed seed and input order give a
    byte-identical batch sequence.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    pool = list(examples)
    order = np.random.default_rng(seed).permutation(len(pool))
    for lo in range(0, len(pool), batch_size):
        group = [pool[i] for i in order[lo:lo + batch_size]]
        src, src_mask = _pad_rows([e.source_ids for e in group])
        src_ext, _ = _pad_rows([e.source_ext_ids for e in group])
        tgt_in, tgt_mask = _pad_rows([e.target_ids for e in group])
        tgt_out, _ = _pad_rows([e.target_ext_ids for e in group])
        flags, _ = _pad_rows([[int(f) for f in e.oov_flags] for e in group])
        yield Batch(
            source=src,
            source_ext=src_ext,
            source_lengths=np.array([len(e.source_ids) for e in group]),
            source_mask=src_mask,
            target_in=tgt_in,
            target_out=tgt_out,
            target_lengths=np.array([len(e.target_ids) for e in group]),
            target_mask=tgt_mask,
            oov_flags=flags.astype(bool),
            max_ext_size=vocab_size + max(len(e.source_oovs) for e in group),
            examples=group,
        )


def load_dataset(path: str, fmt: str = "jsonl",
                 summary_path: str | None = None) -> Iterator[tuple[list[str], list[str]]]:
    """Stream (article tokens, summary tokens) pairs from disk.

    ``jsonl``: one object per line with "article" and "abstract" fields.
    ``text-pair``: one article per line in ``path``, the aligned summary
    on the same line number of ``summary_path``.
    """
    if fmt == "jsonl":
        yield from _load_jsonl(path)
    elif fmt == "text-pair":
        if summary_path is None:
            raise ValueError("text-pair format needs summary_path")
        yield from _load_text_pair(path, summary_path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def _load_jsonl(path: str) -> Iterator[tuple[list[str], list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: malformed JSON record: {err}") from None
            for fname in ("article", "abstract"):
                if fname not in record:
                    raise ValueError(f"{path}:{lineno}: missing field {fname!r}")
            yield tokenize(record["article"]), tokenize(record["abstract"])


def _load_text_pair(article_path: str, summary_path: str) -> Iterator[tuple[list[str], list[str]]]:
    with open(article_path, encoding="utf-8") as fa, \
         open(summary_path, encoding="utf-8") as fs:
        for lineno, (a, s) in enumerate(zip_longest(fa, fs), start=1):
            # A length mismatch means part of one file has no partner line.
            if a is None or s is None:
                raise ValueError(f"{article_path} and {summary_path} differ in "
                                 f"line count (no pair for line {lineno})")
            yield tokenize(a), tokenize(s)
