"""Greedy and beam-search generation over the extended vocabulary.

Both decoders consume a step function mapping (previous token id, decoder
state, coverage) to the next-token distribution; the default one wraps the
model's decode_step, and tests inject rigged distributions through the
same seam. Greedy and beam search are deliberately independent
implementations so their beam_size=1 agreement is a real check rather
than a tautology.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_EPS, Tensor
from .data import START_ID, STOP_ID, EncodedExample, Vocabulary, decode_ext_ids
from .model import (DecoderStepTrace, EncoderOutput, ModelParameters,
                    decode_step, encode)

# step(prev_token_id, state, coverage) ->
#     (p_final ndarray, new_state, new_coverage, trace)
StepFn = Callable[[int, object, object], tuple]


def make_model_step(example: EncodedExample, params: ModelParameters,
                    use_coverage: bool) -> tuple[StepFn, object, Tensor]:
    """Step function backed by the model, plus its initial state/coverage."""
    enc = encode(example.source_ids, params)

    def step(prev_id, state, coverage):
        trace, new_state, new_cov = decode_step(prev_id, state, enc, coverage,
                                                example, params, use_coverage)
        return trace.p_final.data, new_state, new_cov, trace

    return step, enc.initial_state, ad.zeros(len(example.source_ids))


@dataclass
class Hypothesis:
    """One partial or completed decode path.

    token_ids holds the emitted (non-STOP) extended ids; when ``done``,
    log_prob additionally includes the STOP step that completed the path.
    """

    token_ids: list[int]
    log_prob: float
    state: object
    coverage: object
    traces: list = field(default_factory=list)
    done: bool = False

    @property
    def score(self) -> float:
        """Length-normalized log-probability (STOP counts toward length)."""
        steps = len(self.token_ids) + (1 if self.done else 0)
        return self.log_prob / max(1, steps)


def _log(p: float) -> float:
    return float(np.log(max(p, LOG_EPS)))


def greedy_decode(example: EncodedExample, vocab: Vocabulary,
                  params: ModelParameters | None, max_len: int,
                  use_coverage: bool = True,
                  step: tuple[StepFn, object, object] | None = None,
                  ) -> tuple[list[str], list[DecoderStepTrace]]:
    """Argmax decoding until STOP or ``max_len`` tokens.

    np.argmax resolves probability ties toward the lowest id. Returns the
    rendered token strings and the per-step traces.
    """
    if step is None:
        step = make_model_step(example, params, use_coverage)
    step_fn, state, coverage = step
    prev = START_ID
    emitted: list[int] = []
    traces: list[DecoderStepTrace] = []
    while len(emitted) < max_len:
        p, state, coverage, trace = step_fn(prev, state, coverage)
        traces.append(trace)
        nxt = int(np.argmax(p))
        if nxt == STOP_ID:
            break
        emitted.append(nxt)
        prev = nxt
    return decode_ext_ids(emitted, vocab, example.source_oovs), traces


def beam_search(example: EncodedExample, vocab: Vocabulary,
                params: ModelParameters | None, beam_size: int, max_len: int,
                use_coverage: bool = True,
                step: tuple[StepFn, object, object] | None = None) -> Hypothesis:
    """Length-normalized beam search.

    Completed hypotheses are set aside as they finish; the best completed
    one by score is returned, falling back to the best partial when
    nothing completed. The search stops once beam_size hypotheses have
    completed or every path has hit max_len.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if step is None:
        step = make_model_step(example, params, use_coverage)
    step_fn, state, coverage = step
    live = [Hypothesis([], 0.0, state, coverage)]
    completed: list[Hypothesis] = []

    for _ in range(max_len):
        if not live or len(completed) >= beam_size:
            break
        candidates: list[tuple[float, int, int, Hypothesis, object, object, object]] = []
        order = 0
        for hyp in live:
            prev = hyp.token_ids[-1] if hyp.token_ids else START_ID
            p, new_state, new_cov, trace = step_fn(prev, hyp.state, hyp.coverage)
            # Two candidates per beam slot keep the beam refillable even
            # when top extensions are STOPs.
            take = min(len(p), 2 * beam_size)
            top = np.argsort(-p, kind="stable")[:take]
            for tid in top:
                candidates.append((hyp.log_prob + _log(p[tid]), order, int(tid),
                                   hyp, new_state, new_cov, trace))
                order += 1
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        # Fill strictly from the top of the ranking and stop at the first
        # full bucket; lower-ranked completions must not sneak into the
        # completed set past a full live beam.
        for lp, _, tid, hyp, new_state, new_cov, trace in candidates:
            if tid == STOP_ID:
                completed.append(Hypothesis(hyp.token_ids, lp, new_state,
                                            new_cov, hyp.traces + [trace],
                                            done=True))
            else:
                live.append(Hypothesis(hyp.token_ids + [tid], lp, new_state,
                                       new_cov, hyp.traces + [trace]))
            if len(live) >= beam_size or len(completed) >= beam_size:
                break

    pool = completed or live
    return max(pool, key=lambda h: h.score)


def render(hypothesis: Hypothesis, example: EncodedExample,
           vocab: Vocabulary) -> list[str]:
    """Hypothesis ids to words; copied ids resolve through source_oovs."""
    return decode_ext_ids(hypothesis.token_ids, vocab, example.source_oovs)
