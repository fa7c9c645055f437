"""Synthetic paraphrase corpus for desk-scale abstraction experiments.

Each article is a sequence of filler words, source-side content words, and
a rare entity token; its summary restates the content words, repeats a
filler word verbatim, and copies the entity. Built so that
frequency-capped vocabularies keep all synonyms and fillers but exclude
the entities:

- content word s<i> paraphrases to its aligned synonym t<i> (both
  frequent, in-vocab), except that with probability ``copy_prob`` the
  summary reuses s<i> verbatim - each content position genuinely admits
  both a copied and a generated continuation;
- filler words c<i> appear verbatim in articles and summaries (copyable
  and generable, which is what leaves p_gen genuinely free to move);
- entities ent<i> are rare, so they land outside the vocabulary and can
  only be produced by copying.
"""

from __future__ import annotations

import numpy as np


def vocab_budget(n_synonym_pairs: int = 20, n_fillers: int = 12) -> int:
    """Vocabulary size that admits synonyms and fillers but no entities."""
    return 4 + 2 * n_synonym_pairs + n_fillers


def generate_corpus(n_pairs: int = 500, seed: int = 0,
                    n_synonym_pairs: int = 20, n_fillers: int = 12,
                    n_entities: int = 120, content_per_pair: int = 3,
                    copy_prob: float = 0.35) -> list[tuple[list[str], list[str]]]:
    """Deterministic list of (article tokens, summary tokens) pairs."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if not 0.0 <= copy_prob <= 1.0:
        raise ValueError("copy_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sources = [f"s{i}" for i in range(n_synonym_pairs)]
    targets = [f"t{i}" for i in range(n_synonym_pairs)]
    fillers = [f"c{i}" for i in range(n_fillers)]
    entities = [f"ent{i}" for i in range(n_entities)]

    corpus = []
    for _ in range(n_pairs):
        content = rng.choice(n_synonym_pairs, size=content_per_pair, replace=False)
        entity = entities[int(rng.integers(n_entities))]
        kept_filler = fillers[int(rng.integers(n_fillers))]

        article: list[str] = []
        for ci in content:
            article.append(fillers[int(rng.integers(n_fillers))])
            article.append(sources[ci])
        article.append(kept_filler)
        article.append(entity)
        article.append(fillers[int(rng.integers(n_fillers))])

        summary = [sources[ci] if rng.random() < copy_prob else targets[ci]
                   for ci in content]
        summary.insert(int(rng.integers(len(summary) + 1)), kept_filler)
        summary.insert(int(rng.integers(len(summary) + 1)), entity)
        corpus.append((article, summary))
    return corpus
