"""Synthetic minority-class generation and the data integration strategies.

``none`` trains on the original notes only, ``base`` keeps every generated
note, ``confidence_filter`` keeps the generated notes a clean-data classifier
is most confident about, and ``medaug`` keeps everything but flags the
student for KL-consistency training against a teacher.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .classifier import ClassifierConfig, ClassifierModel, clf_train
from .corpus import CorpusSplit, LabeledDocument, Vocabulary, build_vocab
from .genlm import GeneratorModel, PromptSpec, sample_many

PROMPT_MODES = ("with_context", "without_context")
STRATEGIES = ("none", "base", "confidence_filter", "medaug")
KL_SCOPES = ("all", "synthetic")
NOISE_MODES = ("relabel", "swap")


class GenerationStarvation(RuntimeError):
    def __init__(self, requested: int, achieved: int, attempts: int):
        super().__init__(
            f"generation starved: {achieved} of {requested} synthetic notes after {attempts} attempts"
        )
        self.requested = requested
        self.achieved = achieved


@dataclass
class AugmentationPlan:
    count: int = 900
    label: int = 1
    prompt_mode: str = "with_context"
    context_tokens: int = 2
    dedup: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("synthetic count must be nonnegative")
        if self.label != 1:
            raise ValueError("only positive-label generation is supported")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}, got {self.prompt_mode!r}")


@dataclass(frozen=True)
class StrategyChoice:
    kind: str
    keep_fraction: float = 0.5
    tau: float = 1.0
    kl_scope: str = "all"

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.kind!r}")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.kl_scope not in KL_SCOPES:
            raise ValueError(f"kl_scope must be one of {KL_SCOPES}")

    def params(self) -> dict:
        if self.kind == "confidence_filter":
            return {"keep_fraction": self.keep_fraction}
        if self.kind == "medaug":
            return {"tau": self.tau, "kl_scope": self.kl_scope}
        return {}


def _prompt_seed(base: int, i: int) -> int:
    return int(np.random.SeedSequence([base, i]).generate_state(1)[0])


def generate_synthetic(
    g_tuned: GeneratorModel,
    plan: AugmentationPlan,
    train_docs: Sequence[LabeledDocument],
    temperature: float | None = None,
    top_k: int | None = None,
) -> list[LabeledDocument]:
    """Sample ``plan.count`` positive notes from the tuned generator.

    Empty bodies are dropped, and with ``plan.dedup`` so are exact repeats of
    an earlier sample or of a training note. Sampling stops with
    ``GenerationStarvation`` once 10x ``plan.count`` prompts have been spent.
    """
    if plan.count == 0:
        return []
    cfg = g_tuned.config
    contexts: list[list[str]] = []
    if plan.prompt_mode == "with_context":
        contexts = [d.tokens[: plan.context_tokens] for d in train_docs if d.label == plan.label]
        if not contexts:
            raise ValueError("with_context prompts need at least one positive training note")
    rng = np.random.default_rng(plan.seed)
    seen = {d.text for d in train_docs} if plan.dedup else set()
    out: list[LabeledDocument] = []
    budget = 10 * plan.count
    attempts = 0
    while len(out) < plan.count and attempts < budget:
        n = min(plan.count - len(out), budget - attempts)
        prompts, ids = [], []
        for i in range(attempts, attempts + n):
            ctx = contexts[int(rng.integers(len(contexts)))] if contexts else []
            prompts.append(
                PromptSpec(
                    label=plan.label,
                    context=list(ctx),
                    temperature=cfg.temperature if temperature is None else temperature,
                    top_k=cfg.top_k if top_k is None else top_k,
                    max_new_tokens=cfg.max_new_tokens,
                    seed=_prompt_seed(plan.seed, i),
                )
            )
            ids.append(f"syn-{plan.seed}-{i:06d}")
        attempts += n
        for doc in sample_many(g_tuned, prompts, ids):
            if doc is None or (plan.dedup and doc.text in seen):
                continue
            seen.add(doc.text)
            out.append(doc)
            if len(out) == plan.count:
                break
    if len(out) < plan.count:
        raise GenerationStarvation(plan.count, len(out), attempts)
    return out


def inject_noise(
    synthetic: Sequence[LabeledDocument],
    rate: float,
    seed: int,
    mode: str = "relabel",
    negatives: Sequence[LabeledDocument] = (),
) -> list[LabeledDocument]:
    """Corrupt a random ``rate`` fraction of generated notes.

    ``relabel`` flips the label to 0; ``swap`` keeps the label but replaces
    the text with a random negative note. The choice for note i depends only
    on (seed, i), so prefixes of a pool see the same corruption.
    """
    if mode not in NOISE_MODES:
        raise ValueError(f"noise mode must be one of {NOISE_MODES}")
    if not 0 <= rate <= 1:
        raise ValueError("noise rate must lie in [0, 1]")
    if rate == 0:
        return list(synthetic)
    if mode == "swap" and not negatives:
        raise ValueError("swap noise needs negative notes to draw from")
    rng = np.random.default_rng([seed, 7919])
    draws = rng.random(len(synthetic))
    picks = rng.integers(0, max(len(negatives), 1), size=len(synthetic))
    out = []
    for d, u, j in zip(synthetic, draws, picks):
        if u >= rate:
            out.append(d)
        elif mode == "relabel":
            out.append(LabeledDocument(d.id, 1 - d.label, d.text, d.origin))
        else:
            out.append(LabeledDocument(d.id, d.label, negatives[j].text, d.origin))
    return out


def _check_disjoint(train: Sequence[LabeledDocument], synthetic: Sequence[LabeledDocument]) -> None:
    ids = {d.id for d in train}
    clash = [d.id for d in synthetic if d.id in ids]
    if clash or len({d.id for d in synthetic}) != len(synthetic):
        raise ValueError(f"id collision between training and synthetic notes: {clash[:3] or 'duplicate synthetic ids'}")


def strategy_base(train: Sequence[LabeledDocument], synthetic: Sequence[LabeledDocument]) -> list[LabeledDocument]:
    _check_disjoint(train, synthetic)
    return list(train) + list(synthetic)


def strategy_confidence_filter(
    train: Sequence[LabeledDocument],
    synthetic: Sequence[LabeledDocument],
    keep_fraction: float,
    seed: int,
    classifier_config: ClassifierConfig | None = None,
    vocab: Vocabulary | None = None,
    scorer: ClassifierModel | None = None,
) -> list[LabeledDocument]:
    """Keep the ceil(keep_fraction * n) synthetic notes whose intended label is most probable.

    The scorer is a fresh classifier trained on ``train`` only unless one is
    passed in. Ties in confidence are broken by id.
    """
    _check_disjoint(train, synthetic)
    if scorer is None:
        scorer = ClassifierModel.init(vocab or build_vocab(train), classifier_config or ClassifierConfig(), seed)
        clf_train(scorer, train, seed=seed)
    n_keep = math.ceil(round(keep_fraction * len(synthetic), 9))
    probs = scorer.predict_proba_batch(synthetic)
    conf = [float(p[d.label]) for p, d in zip(probs, synthetic)]
    ranked = sorted(range(len(synthetic)), key=lambda i: (-conf[i], synthetic[i].id))
    return list(train) + [synthetic[i] for i in sorted(ranked[:n_keep])]


def docs_hash(docs: Sequence[LabeledDocument]) -> str:
    h = hashlib.sha256()
    for d in docs:
        h.update(json.dumps(asdict(d), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class AugmentationResult:
    combined: list[LabeledDocument]
    synthetic: list[LabeledDocument]
    apply_kl: bool
    report: dict = field(default_factory=dict)


def run_augmentation(
    split: CorpusSplit,
    g_tuned: GeneratorModel | None,
    plan: AugmentationPlan,
    strategy: StrategyChoice,
    classifier_config: ClassifierConfig | None = None,
    vocab: Vocabulary | None = None,
    synthetic: Sequence[LabeledDocument] | None = None,
    scorer: ClassifierModel | None = None,
) -> AugmentationResult:
    """Build D_combined for one strategy. Pass ``synthetic`` to reuse an existing pool."""
    train = list(split.train)
    report = {
        "strategy": strategy.kind,
        "params": strategy.params(),
        "plan": asdict(plan),
        "n_train": len(train),
    }
    if strategy.kind == "none":
        report.update(n_requested=0, n_synthetic=0, n_kept=0, n_combined=len(train), augmented=False)
        return AugmentationResult(train, [], False, report)
    if synthetic is None:
        if g_tuned is None:
            raise ValueError("run_augmentation needs a tuned generator or a synthetic pool")
        synthetic = generate_synthetic(g_tuned, plan, train)
    synthetic = list(synthetic)
    if any(d.origin != "synthetic" for d in synthetic):
        raise ValueError("synthetic pool contains notes not marked synthetic")
    if strategy.kind == "confidence_filter":
        combined = strategy_confidence_filter(
            train, synthetic, strategy.keep_fraction, plan.seed, classifier_config, vocab, scorer
        )
    else:
        combined = strategy_base(train, synthetic)
    report.update(
        n_requested=plan.count,
        n_synthetic=len(synthetic),
        n_kept=len(combined) - len(train),
        n_combined=len(combined),
        augmented=True,
        synthetic_hash=docs_hash(synthetic),
    )
    return AugmentationResult(combined, synthetic, strategy.kind == "medaug", report)
