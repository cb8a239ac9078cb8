"""Labeled documents, vocabulary, splits, and the pseudo-clinical benchmark."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, SEP, EOS, LBL0, LBL1 = "<pad>", "<unk>", "<sep>", "<eos>", "<lbl0>", "<lbl1>"
RESERVED = (PAD, UNK, SEP, EOS, LBL0, LBL1)
PAD_ID, UNK_ID, SEP_ID, EOS_ID, LBL0_ID, LBL1_ID = range(6)
ORIGINS = ("original", "synthetic")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class LabeledDocument:
    id: str
    label: int
    text: str
    origin: str = "original"

    def __post_init__(self):
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise ValueError(f"document {self.id!r}: label must be 0 or 1, got {self.label!r}")
        if not tokenize(self.text):
            raise ValueError(f"document {self.id!r}: text is empty")
        if self.origin not in ORIGINS:
            raise ValueError(f"document {self.id!r}: unknown origin {self.origin!r}")

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)


@dataclass
class CorpusSplit:
    train: list[LabeledDocument]
    valid: list[LabeledDocument]
    test: list[LabeledDocument]
    synthetic: list[LabeledDocument] = field(default_factory=list)

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name in ("train", "valid", "test"):
            for d in getattr(self, name):
                if d.id in seen:
                    raise ValueError(f"document id {d.id!r} appears in both {seen[d.id]} and {name}")
                seen[d.id] = name

    @property
    def combined(self) -> list[LabeledDocument]:
        return list(self.train) + list(self.synthetic)


class Vocabulary:
    """Token/index bijection with the six reserved tokens at indices 0-5."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be distinct")
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.min_freq == other.min_freq

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def content(self) -> list[str]:
        return self.itos[len(RESERVED):]


def build_vocab(docs: Sequence[LabeledDocument], min_freq: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times, ordered by (count desc, token)."""
    if not docs:
        raise ValueError("build_vocab: empty corpus")
    counts = Counter(t for d in docs for t in d.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, min_freq=min_freq)


def encode_labeled(doc: LabeledDocument, vocab: Vocabulary, max_len: int = 128) -> list[int]:
    """``[LBL{y}, SEP, tokens..., EOS]``, body truncated so the total fits ``max_len``."""
    if max_len < 4:
        raise ValueError("encode_labeled: max_len must be at least 4")
    body = vocab.encode(doc.tokens)[: max_len - 3]
    return [LBL1_ID if doc.label else LBL0_ID, SEP_ID, *body, EOS_ID]


def encode_text(doc: LabeledDocument, vocab: Vocabulary) -> list[int]:
    return vocab.encode(doc.tokens)


# ------------------------------------------------------------------ splits


def undersample_balanced(train: Sequence[LabeledDocument], seed: int) -> list[LabeledDocument]:
    """All minority-class documents plus an equal-size random draw from the majority class."""
    pos = [d for d in train if d.label == 1]
    neg = [d for d in train if d.label == 0]
    if not pos or not neg:
        raise ValueError("undersample_balanced: both classes must be present")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(majority), size=len(minority), replace=False))
    out = minority + [majority[i] for i in pick]
    return [out[i] for i in rng.permutation(len(out))]


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor-sized valid/test partitions; the remainder goes to train."""
    n_valid = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    return n - n_valid - n_test, n_valid, n_test


def make_split(docs: Sequence[LabeledDocument], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> CorpusSplit:
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"make_split: ratios must be three nonnegative numbers summing to 1, got {ratios}")
    if len(docs) < 3:
        raise ValueError(f"make_split: need at least 3 documents, got {len(docs)}")
    n_train, n_valid, _ = split_sizes(len(docs), ratios)
    order = np.random.default_rng(seed).permutation(len(docs))
    shuffled = [docs[i] for i in order]
    return CorpusSplit(
        train=shuffled[:n_train],
        valid=shuffled[n_train:n_train + n_valid],
        test=shuffled[n_train + n_valid:],
    )


# ---------------------------------------------------------------- benchmark

_FILLER = (
    "patient admitted with history of presented to emergency department for evaluation "
    "and management the was noted on exam blood pressure heart rate labs showed "
    "normal sinus rhythm chest xray imaging unremarkable medications continued home "
    "regimen discharge instructions given hospital course notable plan follow primary "
    "care physician clinic week daily dose tablet mg oral iv fluids started received "
    "antibiotics transferred floor icu stay overnight monitoring consult cardiology "
    "nephrology pulmonary team reviewed findings consistent mild moderate chronic acute "
    "abdominal review systems negative except above family social alcohol tobacco "
    "denies allergies known physical general alert oriented lungs clear bilaterally "
    "extremities edema neuro intact skin warm dry"
).split()

POSITIVE_PHRASES = (
    "recurrent chf", "missed dialysis", "poor adherence", "frequent falls",
    "unstable housing", "persistent bacteremia", "rising creatinine", "worsening dyspnea",
    "declined placement", "new oxygen", "uncontrolled diabetes", "repeat transfusion",
)
NEGATIVE_PHRASES = (
    "stable vitals", "tolerating diet", "ambulating independently", "pain controlled",
    "strong support", "afebrile throughout", "wound healing", "appointment arranged",
    "euvolemic appearing", "returned baseline", "independent adls", "resolved symptoms",
)


@dataclass(frozen=True)
class SynthBenchSpec:
    """Parameters of the pseudo-clinical benchmark.

    ``cross_rate`` is the chance a document also carries one phrase of the
    opposite class, which keeps the task from being trivially separable.
    """

    n_docs: int = 5000
    n_content_words: int = 150
    n_positive_phrases: int = 8
    n_negative_phrases: int = 8
    min_len: int = 12
    max_len: int = 30
    positive_fraction: float = 0.2
    label_noise: float = 0.0
    cross_rate: float = 0.3
    phrase_geom_p: float = 0.6
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.positive_fraction < 1:
            raise ValueError("positive_fraction must lie in (0, 1)")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("document length range is empty")
        if not 0 <= self.label_noise < 1 or not 0 <= self.cross_rate <= 1:
            raise ValueError("label_noise and cross_rate must be probabilities")
        if not 0 < self.phrase_geom_p <= 1:
            raise ValueError("phrase_geom_p must lie in (0, 1]")
        if not 1 <= self.n_positive_phrases <= len(POSITIVE_PHRASES):
            raise ValueError(f"n_positive_phrases must be in [1, {len(POSITIVE_PHRASES)}]")
        if not 1 <= self.n_negative_phrases <= len(NEGATIVE_PHRASES):
            raise ValueError(f"n_negative_phrases must be in [1, {len(NEGATIVE_PHRASES)}]")
        if self.n_content_words < 1 or self.n_docs < 0:
            raise ValueError("n_content_words must be positive and n_docs nonnegative")

    @property
    def positive_phrases(self) -> tuple[str, ...]:
        return POSITIVE_PHRASES[: self.n_positive_phrases]

    @property
    def negative_phrases(self) -> tuple[str, ...]:
        return NEGATIVE_PHRASES[: self.n_negative_phrases]

    def content_words(self) -> list[str]:
        words = list(_FILLER[: self.n_content_words])
        words += [f"term{i:03d}" for i in range(self.n_content_words - len(words))]
        return words


def synth_benchmark(spec: SynthBenchSpec) -> list[LabeledDocument]:
    """Generate ``spec.n_docs`` templated notes.

    Each latent-positive note embeds k >= 1 positive phrases (k geometric),
    latent negatives embed negative phrases, and with ``cross_rate`` one
    phrase of the other class is added. The stored label is the latent label
    flipped with probability ``label_noise``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    words = spec.content_words()
    docs = []
    for i in range(spec.n_docs):
        latent = int(rng.random() < spec.positive_fraction)
        own, other = (
            (spec.positive_phrases, spec.negative_phrases) if latent else (spec.negative_phrases, spec.positive_phrases)
        )
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        units: list[str] = [words[j] for j in rng.integers(0, len(words), size=length)]
        phrases = [own[j] for j in rng.integers(0, len(own), size=int(rng.geometric(spec.phrase_geom_p)))]
        if rng.random() < spec.cross_rate:
            phrases.append(other[int(rng.integers(0, len(other)))])
        for ph in phrases:
            units.insert(int(rng.integers(0, len(units) + 1)), ph)
        label = latent ^ int(rng.random() < spec.label_noise)
        docs.append(LabeledDocument(id=f"doc-{spec.seed}-{i:06d}", label=label, text=" ".join(units)))
    return docs


def count_phrases(text: str, phrases: Iterable[str]) -> int:
    """Occurrences of any of ``phrases`` as contiguous token runs in ``text``."""
    toks = tokenize(text)
    n = 0
    for ph in phrases:
        p = ph.split()
        n += sum(toks[i:i + len(p)] == p for i in range(len(toks) - len(p) + 1))
    return n


def phrase_score(doc: LabeledDocument, spec: SynthBenchSpec) -> int:
    """Oracle score: positive-phrase count minus negative-phrase count."""
    return count_phrases(doc.text, spec.positive_phrases) - count_phrases(doc.text, spec.negative_phrases)


# -------------------------------------------------------------------- jsonl


def save_jsonl(docs: Iterable[LabeledDocument], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps(asdict(d), ensure_ascii=False) + "\n")
    tmp.replace(path)


def load_jsonl(path) -> list[LabeledDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                missing = [k for k in ("id", "label", "text") if k not in rec]
                if missing:
                    raise ValueError(f"missing field(s) {', '.join(missing)}")
                docs.append(
                    LabeledDocument(
                        id=str(rec["id"]), label=rec["label"], text=rec["text"], origin=rec.get("origin", "original")
                    )
                )
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return docs
