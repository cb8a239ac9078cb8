import numpy as np
import pytest

from medaug.augment import AugmentationPlan, generate_synthetic, inject_noise
from medaug.checkpoint import param_hash
from medaug.classifier import ClassifierConfig, fit
from medaug.corpus import CorpusSplit, LabeledDocument
from medaug.distill import (
    DistillConfig,
    PipelineStageError,
    factory_for,
    mean_kl_to_teacher,
    medaug_pipeline,
    pretrain_teacher,
    train_student,
)
from medaug.genlm import GeneratorConfig

FAST_CLF = ClassifierConfig(embed_dim=8, hidden_dim=8, epochs=4, lr=0.02)


def _cfg(**kw):
    return DistillConfig(teacher=FAST_CLF, student=FAST_CLF, **kw)


@pytest.fixture(scope="module")
def noisy_combined(small_split, tuned_lm):
    pool = generate_synthetic(tuned_lm, AugmentationPlan(count=60, seed=0), small_split.train)
    return small_split.train + inject_noise(pool, 0.5, seed=0)


@pytest.fixture(scope="module")
def teacher(small_split, small_vocab):
    return pretrain_teacher(factory_for(small_vocab), small_split.train, _cfg())


def test_teacher_is_frozen(teacher):
    assert teacher.frozen
    assert all(not p.requires_grad for p in teacher.parameters())


def test_teacher_rejects_synthetic(small_split, small_vocab):
    bad = small_split.train + [LabeledDocument("s", 1, "x", "synthetic")]
    with pytest.raises(ValueError, match="original"):
        pretrain_teacher(factory_for(small_vocab), bad, _cfg())


def test_tau_zero_equals_plain_training(small_vocab, noisy_combined, teacher):
    student, _ = train_student(factory_for(small_vocab), noisy_combined, teacher, _cfg(tau=0.0, seed=3))
    plain = factory_for(small_vocab)(FAST_CLF, 3)
    fit(plain, noisy_combined, FAST_CLF.epochs, FAST_CLF.lr, 3, FAST_CLF.batch_size)
    assert param_hash(student) == param_hash(plain)


def test_teacher_unchanged_by_student_training(small_vocab, noisy_combined, teacher):
    before = param_hash(teacher)
    train_student(factory_for(small_vocab), noisy_combined, teacher, _cfg(tau=1.0))
    assert param_hash(teacher) == before


def test_loss_breakdown_identity(small_vocab, noisy_combined, teacher):
    _, hist = train_student(factory_for(small_vocab), noisy_combined, teacher, _cfg(tau=2.5))
    for b in hist:
        assert b.total == pytest.approx(b.student + 2.5 * b.kl, rel=1e-9, abs=1e-12)
        assert b.kl >= 0


def test_huge_tau_copies_teacher(small_vocab, small_split, noisy_combined, teacher):
    cfg = DistillConfig(tau=1000.0, teacher=FAST_CLF, student=ClassifierConfig(8, 8, epochs=8, lr=0.02))
    student, _ = train_student(factory_for(small_vocab), noisy_combined, teacher, cfg)
    assert mean_kl_to_teacher(student, teacher, small_split.valid) < 0.01


def test_kl_pressure_over_seeds(small_vocab, small_split, noisy_combined, teacher):
    def kl_at(tau):
        vals = []
        for seed in range(5):
            s, _ = train_student(factory_for(small_vocab), noisy_combined, teacher, _cfg(tau=tau, seed=seed))
            vals.append(mean_kl_to_teacher(s, teacher, small_split.valid))
        return np.mean(vals)

    k0, k1, k10 = kl_at(0.0), kl_at(1.0), kl_at(10.0)
    assert k10 < k1 < k0


def test_synthetic_scope_without_synthetic_rows_is_plain(small_vocab, small_split, teacher):
    a, _ = train_student(factory_for(small_vocab), small_split.train, teacher, _cfg(tau=5.0, kl_scope="synthetic"))
    b, _ = train_student(factory_for(small_vocab), small_split.train, teacher, _cfg(tau=0.0))
    assert param_hash(a) == param_hash(b)


def test_reverse_direction_runs(small_vocab, noisy_combined, teacher):
    _, hist = train_student(
        factory_for(small_vocab), noisy_combined, teacher, _cfg(tau=1.0, direction="student_teacher")
    )
    assert all(np.isfinite(b.total) for b in hist)


def test_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(tau=-0.1)
    with pytest.raises(ValueError):
        DistillConfig(kl_scope="some")
    with pytest.raises(ValueError):
        DistillConfig(direction="both")


def test_unfrozen_teacher_rejected(small_vocab, small_split):
    t = factory_for(small_vocab)(FAST_CLF, 0)
    with pytest.raises(ValueError, match="frozen"):
        train_student(factory_for(small_vocab), small_split.train, t, _cfg())


TINY_LM = GeneratorConfig(d_model=16, n_heads=2, n_layers=1, context_len=64, epochs=1, lr=5e-3)


def test_pipeline_report(small_split):
    def fresh():
        return CorpusSplit(small_split.train, small_split.valid, small_split.test)

    plan = AugmentationPlan(count=20, seed=0)
    _, r1 = medaug_pipeline(fresh(), TINY_LM, plan, _cfg(seed=1))
    _, r2 = medaug_pipeline(fresh(), TINY_LM, plan, _cfg(seed=1))
    assert r1["hashes"] == r2["hashes"]
    assert r1["counts"]["combined"] == len(small_split.train) + 20
    assert set(r1["timings"]) == {"finetune", "generate", "teacher", "student"}


def test_pipeline_stage_error(small_split):
    split = CorpusSplit(small_split.train, small_split.valid, small_split.test)
    with pytest.raises(PipelineStageError) as info:
        medaug_pipeline(split, TINY_LM, AugmentationPlan(count=3, seed=0), _cfg(), min_freq=10**6)
    assert info.value.stage
