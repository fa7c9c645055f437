"""Losses, optimizers, and the three-phase training schedule.

The schedule trains the same network three times in a row, each phase
resuming from the previous phase's checkpoint:

1. vanilla: plain sequence NLL, no coverage term in attention;
2. coverage: NLL + lambda_cov * coverage penalty, coverage feeds attention;
3. oov penalty: adds the binary cross-entropy between (1 - p_gen) and the
   per-position OOV indicator, pushing p_gen down exactly where the target
   word cannot be generated from the fixed vocabulary and up elsewhere.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .data import Batch, EncodedExample, make_batches
from .model import (DecoderStepTrace, ModelConfig, ModelParameters, encode,
                    init_parameters, load_checkpoint, run_decoder,
                    save_checkpoint)


class PhaseKind(enum.Enum):
    VANILLA = "vanilla"
    COVERAGE = "coverage"
    OOV_PENALTY = "oov_penalty"


@dataclass(frozen=True)
class TrainingPhase:
    """One schedule stage: which loss terms are active and for how long."""

    kind: PhaseKind
    steps: int
    lambda_cov: float = 0.0
    lambda_oov: float = 0.0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("phase step budget must be nonnegative")
        k = self.kind
        if k is PhaseKind.VANILLA and (self.lambda_cov or self.lambda_oov):
            raise ValueError("vanilla phase must have lambda_cov=lambda_oov=0")
        if k is PhaseKind.COVERAGE and (self.lambda_cov <= 0 or self.lambda_oov != 0):
            raise ValueError("coverage phase needs lambda_cov>0 and lambda_oov=0")
        if k is PhaseKind.OOV_PENALTY and (self.lambda_cov <= 0 or self.lambda_oov <= 0):
            raise ValueError("oov-penalty phase needs lambda_cov>0 and lambda_oov>0")

    @property
    def uses_coverage(self) -> bool:
        return self.kind is not PhaseKind.VANILLA


@dataclass
class TrainConfig:
    learning_rate: float = 0.15
    optimizer: str = "adagrad"
    adagrad_init_acc: float = 0.1
    clip_norm: float = 2.0
    batch_size: int = 8
    seed: int = 0
    phase1_steps: int = 2000
    phase2_steps: int = 500
    phase3_steps: int = 500
    lambda_cov: float = 1.0
    lambda_oov: float = 1.0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adagrad", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.adagrad_init_acc <= 0:
            raise ValueError("adagrad_init_acc must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.phase1_steps, self.phase2_steps, self.phase3_steps) < 0:
            raise ValueError("phase step budgets must be nonnegative")
        if self.lambda_cov <= 0 or self.lambda_oov <= 0:
            raise ValueError("loss weights must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def phases(self) -> list[TrainingPhase]:
        return [
            TrainingPhase(PhaseKind.VANILLA, self.phase1_steps),
            TrainingPhase(PhaseKind.COVERAGE, self.phase2_steps, self.lambda_cov),
            TrainingPhase(PhaseKind.OOV_PENALTY, self.phase3_steps,
                          self.lambda_cov, self.lambda_oov),
        ]


# ---------------------------------------------------------------------------
# Losses (all return live tape tensors so backward can run through them)
# ---------------------------------------------------------------------------


def _mean_of(terms: list[Tensor]) -> Tensor:
    flat = ad.concat([ad.reshape(t, (1,)) for t in terms])
    return ad.reduce_sum(flat) * Tensor(1.0 / len(terms))


def _unmasked(n: int, mask: Sequence[bool] | None) -> list[int]:
    if mask is None:
        return list(range(n))
    if len(mask) != n:
        raise ValueError(f"mask length {len(mask)} != sequence length {n}")
    return [i for i, m in enumerate(mask) if m]


def nll_loss(traces: Sequence[DecoderStepTrace], target_ext_ids: Sequence[int],
             target_mask: Sequence[bool] | None = None) -> Tensor:
    """Mean over unmasked positions of -log p_final[target]."""
    if len(traces) != len(target_ext_ids):
        raise ValueError(f"{len(traces)} traces for {len(target_ext_ids)} targets")
    keep = _unmasked(len(traces), target_mask)
    if not keep:
        raise ValueError("nll_loss: no unmasked target positions")
    terms = [ad.log(ad.gather(traces[i].p_final, [target_ext_ids[i]]))
             for i in keep]
    return _mean_of(terms) * Tensor(-1.0)


def coverage_loss(traces: Sequence[DecoderStepTrace]) -> Tensor:
    """Mean over steps of sum_i min(a_i, c_i); 0 when attention never repeats."""
    if not traces:
        raise ValueError("coverage_loss: empty trace list")
    for tr in traces:
        if tr.coverage is None:
            raise ValueError(f"coverage_loss: step {tr.t} has no coverage vector")
    terms = [ad.reduce_sum(ad.minimum(tr.attention, tr.coverage)) for tr in traces]
    return _mean_of(terms)


def oov_loss(p_gens: Sequence[Tensor], oov_flags: Sequence[bool],
             target_mask: Sequence[bool] | None = None) -> Tensor:
    """Binary cross-entropy between (1 - p_gen) and the OOV indicator.

    Per position: -log(1 - p_gen) when the target word is OOV, -log(p_gen)
    otherwise, averaged over unmasked positions.
    """
    if len(p_gens) != len(oov_flags):
        raise ValueError(f"{len(p_gens)} p_gen values for {len(oov_flags)} flags")
    keep = _unmasked(len(p_gens), target_mask)
    if not keep:
        raise ValueError("oov_loss: no unmasked target positions")
    one = Tensor(1.0)
    terms = []
    for i in keep:
        p = p_gens[i]
        inside = ad.log(one - p) if oov_flags[i] else ad.log(p)
        terms.append(inside)
    return _mean_of(terms) * Tensor(-1.0)


def total_loss(nll: Tensor, cov: Tensor | None, oov: Tensor | None,
               phase: TrainingPhase) -> Tensor:
    """nll + lambda_cov * cov + lambda_oov * oov under the phase's weights."""
    out = nll
    if phase.lambda_cov:
        if cov is None:
            raise ValueError(f"{phase.kind.value} phase needs a coverage loss")
        out = out + cov * Tensor(phase.lambda_cov)
    if phase.lambda_oov:
        if oov is None:
            raise ValueError(f"{phase.kind.value} phase needs an oov loss")
        out = out + oov * Tensor(phase.lambda_oov)
    return out


def batch_losses(batch: Batch, params: ModelParameters,
                 phase: TrainingPhase) -> tuple[Tensor, Tensor, Tensor]:
    """Teacher-forced forward pass; per-token means across the whole batch."""
    nll_terms: list[Tensor] = []
    cov_terms: list[Tensor] = []
    oov_terms: list[Tensor] = []
    one = Tensor(1.0)
    for ex in batch.examples:
        enc = encode(ex.source_ids, params)
        traces = run_decoder(ex, enc, params, use_coverage=phase.uses_coverage)
        for tr, y, flag in zip(traces, ex.target_ext_ids, ex.oov_flags):
            nll_terms.append(ad.log(ad.gather(tr.p_final, [y])))
            cov_terms.append(ad.reduce_sum(ad.minimum(tr.attention, tr.coverage)))
            oov_terms.append(ad.log(one - tr.p_gen) if flag else ad.log(tr.p_gen))
    nll = _mean_of(nll_terms) * Tensor(-1.0)
    cov = _mean_of(cov_terms)
    oov = _mean_of(oov_terms) * Tensor(-1.0)
    return nll, cov, oov


class Adagrad:
    """Per-coordinate adaptive step: theta -= lr * g / sqrt(sum g^2)."""

    def __init__(self, params: ModelParameters, lr: float, init_acc: float):
        self.params = params
        self.lr = lr
        self.acc = {n: np.full_like(t.data, init_acc) for n, t in params.named()}

    def step(self) -> None:
        for name, t in self.params.named():
            if t.grad is None:
                continue
            a = self.acc[name]
            a += t.grad * t.grad
            t.data -= self.lr * t.grad / np.sqrt(a)


class SGD:
    def __init__(self, params: ModelParameters, lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for _, t in self.params.named():
            if t.grad is not None:
                t.data -= self.lr * t.grad


def make_optimizer(cfg: TrainConfig, params: ModelParameters):
    if cfg.optimizer == "adagrad":
        return Adagrad(params, cfg.learning_rate, cfg.adagrad_init_acc)
    return SGD(params, cfg.learning_rate)


def clip_gradients(params: ModelParameters, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for _, t in params.named():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for _, t in params.named():
            if t.grad is not None:
                t.grad *= scale
    return norm


@dataclass
class StepReport:
    nll: float
    coverage: float
    oov: float
    total: float
    grad_norm: float


def train_step(batch: Batch, params: ModelParameters, phase: TrainingPhase,
               cfg: TrainConfig, optimizer=None) -> StepReport:
    """One optimization step: forward, backward, clip, update."""
    params.zero_grad()
    with Tape() as tape:
        nll, cov, oov = batch_losses(batch, params, phase)
        loss = total_loss(nll, cov if phase.lambda_cov else None,
                          oov if phase.lambda_oov else None, phase)
    for name, value in (("nll", nll), ("coverage", cov), ("oov", oov)):
        if not np.isfinite(value.item()):
            raise FloatingPointError(f"non-finite {name} loss: {value.item()}")
    backward(loss, tape)
    grad_norm = clip_gradients(params, cfg.clip_norm)
    if optimizer is None:
        optimizer = make_optimizer(cfg, params)
    optimizer.step()
    return StepReport(nll=nll.item(), coverage=cov.item(), oov=oov.item(),
                      total=loss.item(), grad_norm=grad_norm)


def _batch_stream(examples: list[EncodedExample], cfg: TrainConfig,
                  vocab_size: int, phase_index: int) -> Iterable[Batch]:
    epoch = 0
    while True:
        seed = cfg.seed + 7919 * phase_index + epoch
        yield from make_batches(examples, cfg.batch_size, seed, vocab_size)
        epoch += 1


LOG_HEADER = "step\tphase\tnll\tcov\toov\tgrad_norm\n"


def run_training(examples: list[EncodedExample], model_cfg: ModelConfig,
                 cfg: TrainConfig, out_dir: str,
                 initial_params: ModelParameters | None = None,
                 ) -> tuple[ModelParameters, str]:
    """Run all three phases, logging losses and checkpointing along the way.

    Writes ``train_log.tsv``, ``latest.ckpt`` (refreshed every
    checkpoint_every steps) and ``phase{1,2,3}.ckpt`` at phase boundaries
    into ``out_dir``. Each phase reloads the previous phase's checkpoint
    file, so the on-disk format is exercised as the actual hand-off.
    Returns the final parameters and the log path.
    """
    if not examples:
        raise ValueError("run_training needs a non-empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    params = initial_params or init_parameters(model_cfg, seed=cfg.seed)
    log_path = os.path.join(out_dir, "train_log.tsv")
    step = 0
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(LOG_HEADER)
        for phase_index, phase in enumerate(cfg.phases()):
            optimizer = make_optimizer(cfg, params)
            stream = _batch_stream(examples, cfg, model_cfg.vocab_size, phase_index)
            for _ in range(phase.steps):
                step += 1
                report = train_step(next(stream), params, phase, cfg, optimizer)
                log.write(f"{step}\t{phase.kind.value}\t{report.nll:.10g}\t"
                          f"{report.coverage:.10g}\t{report.oov:.10g}\t"
                          f"{report.grad_norm:.10g}\n")
                if step % cfg.checkpoint_every == 0:
                    save_checkpoint(os.path.join(out_dir, "latest.ckpt"), params,
                                    extra_meta={"phase": phase.kind.value,
                                                "step": step})
            ckpt = os.path.join(out_dir, f"phase{phase_index + 1}.ckpt")
            save_checkpoint(ckpt, params, extra_meta={"phase": phase.kind.value,
                                                      "step": step})
            params = load_checkpoint(ckpt)
    save_checkpoint(os.path.join(out_dir, "final.ckpt"), params,
                    extra_meta={"step": step})
    return params, log_path
