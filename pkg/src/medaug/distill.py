"""Teacher-student training with a KL consistency penalty.

The student minimizes ``L = L_student + tau * L_KL`` where ``L_student`` is
the mean cross-entropy over the batch and ``L_KL`` the mean divergence between
the frozen teacher's label distribution and the student's, over the in-scope
rows of the batch.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentationPlan, docs_hash, generate_synthetic, strategy_base
from .checkpoint import param_hash
from .classifier import ClassifierConfig, ClassifierModel, fit, score_corpus
from .corpus import CorpusSplit, LabeledDocument, Vocabulary, build_vocab
from .genlm import GeneratorConfig, GeneratorModel, lm_finetune
from .metrics import evaluate
from .tensor import Tensor, kl_divergence, mul, softmax_rows, total

KL_DIRECTIONS = ("teacher_student", "student_teacher")

ModelFactory = Callable[[ClassifierConfig, int], ClassifierModel]


@dataclass
class DistillConfig:
    tau: float = 1.0
    kl_scope: str = "all"
    direction: str = "teacher_student"
    teacher: ClassifierConfig = field(default_factory=ClassifierConfig)
    student: ClassifierConfig = field(default_factory=ClassifierConfig)
    seed: int = 0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if self.kl_scope not in ("all", "synthetic"):
            raise ValueError(f"kl_scope must be 'all' or 'synthetic', got {self.kl_scope!r}")
        if self.direction not in KL_DIRECTIONS:
            raise ValueError(f"direction must be one of {KL_DIRECTIONS}")


@dataclass
class DistillLossBreakdown:
    student: float
    kl: float
    total: float


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def factory_for(vocab: Vocabulary) -> ModelFactory:
    return lambda config, seed: ClassifierModel.init(vocab, config, seed)


def pretrain_teacher(
    model_factory: ModelFactory, d_train: Sequence[LabeledDocument], config: DistillConfig
) -> ClassifierModel:
    """Train a fresh classifier on original notes only, then freeze it."""
    if any(d.origin != "original" for d in d_train):
        raise ValueError("the teacher must only see original notes")
    teacher = model_factory(config.teacher, config.seed)
    fit(teacher, d_train, config.teacher.epochs, config.teacher.lr, config.seed, config.teacher.batch_size)
    return teacher.freeze()


def train_student(
    model_factory: ModelFactory,
    d_combined: Sequence[LabeledDocument],
    teacher: ClassifierModel,
    config: DistillConfig,
) -> tuple[ClassifierModel, list[DistillLossBreakdown]]:
    """Train a fresh student on the combined notes under the teacher's guidance.

    With ``tau == 0`` the KL term is never evaluated, so the result matches
    plain training on ``d_combined`` with the same seed bit for bit.
    """
    if config.tau < 0:
        raise ValueError(f"tau must be nonnegative, got {config.tau}")
    if not teacher.frozen:
        raise ValueError("teacher must be frozen before student training")
    scfg = config.student
    student = model_factory(scfg, config.seed)
    penalty = None
    if config.tau > 0:
        teacher_probs = teacher.predict_proba_batch(d_combined)
        if config.kl_scope == "all":
            in_scope = np.ones(len(d_combined))
        else:
            in_scope = np.array([d.origin == "synthetic" for d in d_combined], dtype=np.float64)

        def penalty(idx: np.ndarray, logits: Tensor) -> Tensor | None:
            mask = in_scope[idx]
            n = mask.sum()
            if n == 0:
                return None
            q = softmax_rows(logits)
            p = Tensor(teacher_probs[idx])
            rows = kl_divergence(p, q) if config.direction == "teacher_student" else kl_divergence(q, p)
            return mul(total(mul(rows, Tensor(mask))), 1.0 / n)

    hist = fit(
        student, d_combined, scfg.epochs, scfg.lr, config.seed, scfg.batch_size,
        penalty=penalty, penalty_weight=config.tau,
    )
    return student, [DistillLossBreakdown(h["student"], h["kl"], h["total"]) for h in hist]


def mean_kl_to_teacher(student: ClassifierModel, teacher: ClassifierModel, docs: Sequence[LabeledDocument]) -> float:
    p = teacher.predict_proba_batch(docs)
    q = student.predict_proba_batch(docs)
    return float(kl_divergence(p, q).data.mean())


def _timed(stage: str, timings: dict, fn, *args, **kwargs):
    start = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise PipelineStageError(stage, exc) from exc
    finally:
        timings[stage] = round(time.perf_counter() - start, 3)


def medaug_pipeline(
    split: CorpusSplit,
    generator_config: GeneratorConfig,
    plan: AugmentationPlan,
    distill_config: DistillConfig,
    balanced: bool = True,
    min_freq: int = 2,
) -> tuple[ClassifierModel, dict]:
    """Fine-tune the generator, synthesize positives, pre-train the teacher, train the student."""
    seed = distill_config.seed
    timings: dict[str, float] = {}
    vocab = build_vocab(split.train, min_freq=min_freq)
    factory = factory_for(vocab)

    def finetune():
        g = GeneratorModel.init(vocab, generator_config, seed)
        return lm_finetune(g, split.train, balanced=balanced, seed=seed)

    g_tuned, lm_history = _timed("finetune", timings, finetune)
    synthetic = _timed("generate", timings, generate_synthetic, g_tuned, plan, split.train)
    combined = strategy_base(split.train, synthetic)
    teacher = _timed("teacher", timings, pretrain_teacher, factory, split.train, distill_config)
    student, history = _timed("student", timings, train_student, factory, combined, teacher, distill_config)
    split.synthetic = list(synthetic)

    def val_metrics(model):
        return evaluate(score_corpus(model, split.valid)) if split.valid else {}

    report = {
        "seed": seed,
        "config": {
            "generator": asdict(generator_config),
            "plan": asdict(plan),
            "distill": asdict(distill_config),
            "balanced": balanced,
            "min_freq": min_freq,
        },
        "hashes": {
            "train": docs_hash(split.train),
            "generator": param_hash(g_tuned),
            "synthetic": docs_hash(synthetic),
            "teacher": param_hash(teacher),
            "student": param_hash(student),
        },
        "counts": {"train": len(split.train), "synthetic": len(synthetic), "combined": len(combined)},
        "lm_loss": lm_history,
        "student_loss": [asdict(b) for b in history],
        "metrics": {"teacher_valid": val_metrics(teacher), "student_valid": val_metrics(student)},
        "timings": timings,
    }
    return student, report
