import numpy as np
import pytest

from pgsum import autodiff as ad
from pgsum.autodiff import Tensor
from pgsum.data import RESERVED, Vocabulary, encode_example, make_batches
from pgsum.model import DecoderStepTrace, ModelConfig, init_parameters
from pgsum.training import (Adagrad, PhaseKind, TrainConfig, TrainingPhase,
                            batch_losses, clip_gradients, coverage_loss,
                            make_optimizer, nll_loss, oov_loss, run_training,
                            total_loss, train_step)

CFG = ModelConfig(vocab_size=10, emb_dim=4, hidden_dim=5)


def vocab():
    return Vocabulary(list(RESERVED) + [f"w{i}" for i in range(6)])


def tiny_batch(n=2, seed=0):
    v = vocab()
    rng = np.random.default_rng(seed)
    words = ["w0", "w1", "w2", "nov1", "nov2"]
    exs = []
    for _ in range(n):
        art = [words[i] for i in rng.integers(len(words), size=5)]
        summ = [words[i] for i in rng.integers(len(words), size=3)]
        exs.append(encode_example(art, summ, v, 20, 20))
    return next(make_batches(exs, n, seed=1, vocab_size=v.size))


def fake_trace(p_final, attention=None, coverage=None, p_gen=0.5, t=0):
    L = 2 if attention is None else len(attention)
    return DecoderStepTrace(
        t=t, token_id=0,
        attention=Tensor(attention if attention is not None else np.full(L, 0.5)),
        p_vocab=Tensor(p_final[:4] if len(p_final) >= 4 else p_final),
        p_gen=Tensor(p_gen),
        p_final=Tensor(p_final),
        coverage=None if coverage is None else Tensor(coverage),
    )


def test_phase_invariants():
    TrainingPhase(PhaseKind.VANILLA, 10)
    TrainingPhase(PhaseKind.COVERAGE, 10, lambda_cov=1.0)
    TrainingPhase(PhaseKind.OOV_PENALTY, 10, lambda_cov=1.0, lambda_oov=0.5)
    with pytest.raises(ValueError):
        TrainingPhase(PhaseKind.VANILLA, 10, lambda_cov=1.0)
    with pytest.raises(ValueError):
        TrainingPhase(PhaseKind.COVERAGE, 10, lambda_cov=0.0)
    with pytest.raises(ValueError):
        TrainingPhase(PhaseKind.COVERAGE, 10, lambda_cov=1.0, lambda_oov=1.0)
    with pytest.raises(ValueError):
        TrainingPhase(PhaseKind.OOV_PENALTY, 10, lambda_cov=1.0, lambda_oov=0.0)
    with pytest.raises(ValueError):
        TrainingPhase(PhaseKind.VANILLA, -1)


def test_train_config_validation_and_roundtrip():
    cfg = TrainConfig(seed=3, batch_size=2)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="adam")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_oov=0.0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1, "momentum": 0.9})


def test_config_phases_ordered_and_weighted():
    cfg = TrainConfig(phase1_steps=5, phase2_steps=3, phase3_steps=2,
                      lambda_cov=0.7, lambda_oov=0.3)
    p1, p2, p3 = cfg.phases()
    assert [p.kind for p in (p1, p2, p3)] == [PhaseKind.VANILLA,
                                              PhaseKind.COVERAGE,
                                              PhaseKind.OOV_PENALTY]
    assert (p1.lambda_cov, p1.lambda_oov) == (0.0, 0.0)
    assert (p2.lambda_cov, p2.lambda_oov) == (0.7, 0.0)
    assert (p3.lambda_cov, p3.lambda_oov) == (0.7, 0.3)
    assert not p1.uses_coverage and p2.uses_coverage and p3.uses_coverage


def test_nll_loss_analytic_values():
    certain = [fake_trace(np.array([1.0, 0.0, 0.0, 0.0]))]
    assert nll_loss(certain, [0]).item() == pytest.approx(0.0, abs=1e-12)

    half = [fake_trace(np.array([0.5, 0.5, 0.0, 0.0]))]
    assert nll_loss(half, [0]).item() == pytest.approx(np.log(2.0), abs=1e-12)

    uniform = [fake_trace(np.full(8, 1.0 / 8.0))]
    assert nll_loss(uniform, [5]).item() == pytest.approx(np.log(8.0), abs=1e-12)


def test_nll_loss_masking_and_errors():
    traces = [fake_trace(np.array([0.5, 0.5])), fake_trace(np.array([0.1, 0.9]))]
    masked = nll_loss(traces, [0, 1], target_mask=[True, False])
    assert masked.item() == pytest.approx(np.log(2.0), abs=1e-12)
    both = nll_loss(traces, [0, 1])
    assert both.item() == pytest.approx((np.log(2.0) - np.log(0.9)) / 2.0, abs=1e-12)
    with pytest.raises(ValueError):
        nll_loss(traces, [0, 1], target_mask=[False, False])
    with pytest.raises(ValueError):
        nll_loss(traces, [0])
    with pytest.raises(ValueError):
        nll_loss(traces, [0, 1], target_mask=[True])


def test_coverage_loss_step_contributions():
    a1 = np.array([0.5, 0.5])
    zero_cov = fake_trace(np.array([1.0]), attention=a1, coverage=np.zeros(2), t=0)
    assert coverage_loss([zero_cov]).item() == pytest.approx(0.0, abs=1e-12)

    repeat = fake_trace(np.array([1.0]), attention=a1, coverage=a1, t=1)
    assert coverage_loss([repeat]).item() == pytest.approx(1.0, abs=1e-12)
    assert coverage_loss([zero_cov, repeat]).item() == pytest.approx(0.5, abs=1e-12)

    disjoint = fake_trace(np.array([1.0]), attention=np.array([0.0, 1.0]),
                          coverage=np.array([1.0, 0.0]), t=1)
    assert coverage_loss([disjoint]).item() == pytest.approx(0.0, abs=1e-12)


def test_coverage_loss_errors():
    with pytest.raises(ValueError):
        coverage_loss([])
    with pytest.raises(ValueError):
        coverage_loss([fake_trace(np.array([1.0]), coverage=None)])


def test_oov_loss_analytic_values():
    assert oov_loss([Tensor(0.5)], [True]).item() == pytest.approx(
        np.log(2.0), abs=1e-9)
    assert oov_loss([Tensor(0.9)], [False]).item() == pytest.approx(
        -np.log(0.9), abs=1e-9)
    assert oov_loss([Tensor(0.9)], [True]).item() == pytest.approx(
        -np.log(0.1), abs=1e-9)


def test_oov_loss_shape_and_mask():
    vals = [Tensor(0.5), Tensor(0.9)]
    masked = oov_loss(vals, [True, False], target_mask=[False, True])
    assert masked.item() == pytest.approx(-np.log(0.9), abs=1e-12)
    with pytest.raises(ValueError):
        oov_loss(vals, [True])
    with pytest.raises(ValueError):
        oov_loss(vals, [True, False], target_mask=[False, False])


def test_oov_loss_direction_matches_indicator():
    # OOV target: lower p_gen is better. Non-OOV: higher p_gen is better.
    lo, hi = Tensor(0.1), Tensor(0.9)
    assert oov_loss([lo], [True]).item() < oov_loss([hi], [True]).item()
    assert oov_loss([hi], [False]).item() < oov_loss([lo], [False]).item()


def test_total_loss_composition():
    nll, cov, oov = Tensor(2.0), Tensor(0.5), Tensor(0.3)
    p1 = TrainingPhase(PhaseKind.VANILLA, 1)
    assert total_loss(nll, None, None, p1) is nll
    p3 = TrainingPhase(PhaseKind.OOV_PENALTY, 1, lambda_cov=1.0, lambda_oov=1.0)
    assert total_loss(nll, cov, oov, p3).item() == pytest.approx(2.8, abs=1e-12)
    half = TrainingPhase(PhaseKind.OOV_PENALTY, 1, lambda_cov=0.5, lambda_oov=2.0)
    assert total_loss(nll, cov, oov, half).item() == pytest.approx(2.85, abs=1e-12)
    with pytest.raises(ValueError):
        total_loss(nll, None, oov, p3)


def test_clip_gradients_scales_to_max_norm():
    p = init_parameters(CFG, seed=0)
    for _, t in p.named():
        t.grad = np.ones_like(t.data)
    before = np.sqrt(sum(t.grad.size for _, t in p.named()))
    norm = clip_gradients(p, 2.0)
    assert norm == pytest.approx(before)
    after = np.sqrt(sum(float(np.sum(t.grad ** 2)) for _, t in p.named()))
    assert after == pytest.approx(2.0, abs=1e-9)

    for _, t in p.named():
        t.grad = np.zeros_like(t.data)
    p.embedding.grad[0, 0] = 0.1
    assert clip_gradients(p, 2.0) == pytest.approx(0.1)
    assert p.embedding.grad[0, 0] == pytest.approx(0.1)  # untouched below max


def test_adagrad_known_update():
    p = init_parameters(CFG, seed=0)
    p.ptr_b.data[()] = 1.0
    opt = Adagrad(p, lr=0.15, init_acc=0.1)
    p.ptr_b.grad = np.array(1.0)
    opt.step()
    assert p.ptr_b.data[()] == pytest.approx(1.0 - 0.15 / np.sqrt(1.1), abs=1e-12)
    # Second identical gradient: accumulator grows, step shrinks.
    before = p.ptr_b.data[()]
    p.ptr_b.grad = np.array(1.0)
    opt.step()
    assert before - p.ptr_b.data[()] == pytest.approx(0.15 / np.sqrt(2.1), abs=1e-12)


def test_grad_check_total_loss_every_phase():
    batch = tiny_batch()
    phases = TrainConfig(lambda_cov=1.0, lambda_oov=1.0).phases()
    for phase in phases:
        p = init_parameters(CFG, seed=31)

        def f():
            nll, cov, oov = batch_losses(batch, p, phase)
            return total_loss(nll, cov if phase.lambda_cov else None,
                              oov if phase.lambda_oov else None, phase)

        rel = ad.grad_check(f, p.named(), epsilon=1e-5, samples=30, seed=2)
        assert rel < 1e-4, f"{phase.kind}: rel err {rel}"


def test_train_step_report_and_descent():
    batch = tiny_batch(n=1, seed=5)
    p = init_parameters(CFG, seed=7)
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.05, batch_size=1,
                      lambda_cov=1.0, lambda_oov=1.0)
    phase = TrainingPhase(PhaseKind.OOV_PENALTY, 50, 1.0, 1.0)
    opt = make_optimizer(cfg, p)
    totals = [train_step(batch, p, phase, cfg, opt).total for _ in range(50)]
    assert totals[-1] < totals[0]
    drops = sum(1 for a, b in zip(totals, totals[1:]) if b < a)
    assert drops >= 45  # near-monotone descent at this step size


def test_train_step_rejects_non_finite():
    batch = tiny_batch()
    p = init_parameters(CFG, seed=0)
    p.embedding.data[:] = np.nan
    cfg = TrainConfig()
    with pytest.raises(FloatingPointError, match="nll"):
        train_step(batch, p, TrainingPhase(PhaseKind.VANILLA, 1), cfg)


def test_run_training_phases_checkpoints_and_determinism(tmp_path):
    v = vocab()
    rng = np.random.default_rng(2)
    words = ["w0", "w1", "w2", "w3", "nov"]
    exs = []
    for _ in range(4):
        art = [words[i] for i in rng.integers(len(words), size=4)]
        summ = [words[i] for i in rng.integers(len(words), size=2)]
        exs.append(encode_example(art, summ, v, 20, 20))
    cfg = TrainConfig(batch_size=2, seed=11, phase1_steps=2, phase2_steps=1,
                      phase3_steps=1, checkpoint_every=2)

    def run(d):
        return run_training(exs, CFG, cfg, str(tmp_path / d))

    _, log_a = run("a")
    _, log_b = run("b")
    text_a = open(log_a).read()
    assert text_a == open(log_b).read()
    lines = text_a.strip().split("\n")
    assert lines[0] == "step\tphase\tnll\tcov\toov\tgrad_norm"
    assert [ln.split("\t")[1] for ln in lines[1:]] == [
        "vanilla", "vanilla", "coverage", "oov_penalty"]
    for name in ("phase1.ckpt", "phase2.ckpt", "phase3.ckpt", "final.ckpt",
                 "latest.ckpt", "train_log.tsv"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == \
        (tmp_path / "b" / "final.ckpt").read_bytes()

    with pytest.raises(ValueError):
        run_training([], CFG, cfg, str(tmp_path / "c"))
