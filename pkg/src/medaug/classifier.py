"""Mean-pooled embedding classifier used as teacher, student and confidence filter."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import LabeledDocument, Vocabulary
from .metrics import ScoredPredictions
from .tensor import Adam, Tensor, cross_entropy, matmul, no_grad, parameter, softmax_rows, tanh


@dataclass
class ClassifierConfig:
    embed_dim: int = 32
    hidden_dim: int = 32
    epochs: int = 8
    lr: float = 0.01
    batch_size: int = 32


class ClassifierModel:
    kind = "classifier"

    def __init__(self, vocab: Vocabulary, config: ClassifierConfig, params: dict[str, Tensor]):
        self.vocab = vocab
        self.config = config
        self.params = params
        self.frozen = False

    @classmethod
    def init(cls, vocab: Vocabulary, config: ClassifierConfig, seed: int = 0) -> "ClassifierModel":
        # output layer starts at zero so a fresh model predicts [0.5, 0.5]
        rng = np.random.default_rng(seed)
        v, e, h = len(vocab), config.embed_dim, config.hidden_dim
        params = {
            "embed": parameter(rng.normal(0.0, 1.0, (v, e))),
            "w1": parameter(rng.normal(0.0, 1.0 / np.sqrt(e), (e, h))),
            "b1": parameter(np.zeros(h)),
            "w2": parameter(np.zeros((h, 2))),
            "b2": parameter(np.zeros(2)),
        }
        return cls(vocab, config, params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def freeze(self) -> "ClassifierModel":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        self.frozen = True
        return self

    def hyperparameters(self) -> dict:
        return asdict(self.config)

    def bag(self, docs: Sequence[LabeledDocument]) -> np.ndarray:
        """Row-normalized token counts, shape [len(docs), |V|]."""
        out = np.zeros((len(docs), len(self.vocab)))
        for i, d in enumerate(docs):
            ids = self.vocab.encode(d.tokens)
            np.add.at(out[i], ids, 1.0)
            out[i] /= len(ids)
        return out

    def forward(self, bag: np.ndarray) -> Tensor:
        p = self.params
        pooled = matmul(Tensor(bag), p["embed"])
        hidden = tanh(matmul(pooled, p["w1"]) + p["b1"])
        return matmul(hidden, p["w2"]) + p["b2"]

    def predict_proba_batch(self, docs: Sequence[LabeledDocument]) -> np.ndarray:
        if not docs:
            return np.zeros((0, 2))
        with no_grad():
            return softmax_rows(self.forward(self.bag(docs))).data


def predict_proba(model: ClassifierModel, doc: LabeledDocument) -> np.ndarray:
    return model.predict_proba_batch([doc])[0]


def score_corpus(model: ClassifierModel, docs: Sequence[LabeledDocument]) -> ScoredPredictions:
    probs = model.predict_proba_batch(docs)
    return ScoredPredictions(probs[:, 1].tolist() if len(docs) else [], [d.label for d in docs])


Penalty = Callable[[np.ndarray, Tensor], "Tensor | None"]


def fit(
    model: ClassifierModel,
    docs: Sequence[LabeledDocument],
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    sample_weights: Sequence[float] | None = None,
    penalty: Penalty | None = None,
    penalty_weight: float = 0.0,
) -> list[dict[str, float]]:
    """Shared minibatch loop. Returns per-epoch means of student, penalty and total loss.

    ``penalty(batch_indices, logits)`` may add an extra term scaled by
    ``penalty_weight``; without it the loop is plain weighted cross-entropy.
    """
    if model.frozen:
        raise ValueError("cannot train a frozen classifier")
    if not docs:
        raise ValueError("clf_train: no documents")
    labels = np.array([d.label for d in docs])
    if labels.min() == labels.max():
        raise ValueError("clf_train: both classes must be present")
    weights = None if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if weights is not None and weights.shape != labels.shape:
        raise ValueError(f"clf_train: {weights.shape[0]} weights for {len(docs)} documents")
    bags = model.bag(docs)
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(docs))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(docs), batch_size):
            idx = order[start:start + batch_size]
            logits = model.forward(bags[idx])
            loss = cross_entropy(logits, labels[idx], None if weights is None else weights[idx])
            extra = penalty(idx, logits) if penalty is not None else None
            total = loss if extra is None else loss + extra * penalty_weight
            opt.zero_grad()
            total.backward()
            opt.step()
            kl = 0.0 if extra is None else extra.item()
            sums += (loss.item(), kl, total.item())
            n_batches += 1
        s = sums / n_batches
        history.append({"student": float(s[0]), "kl": float(s[1]), "total": float(s[2])})
    return history


def clf_train(
    model: ClassifierModel,
    docs: Sequence[LabeledDocument],
    epochs: int | None = None,
    lr: float | None = None,
    seed: int = 0,
    sample_weights: Sequence[float] | None = None,
) -> tuple[ClassifierModel, list[float]]:
    cfg = model.config
    hist = fit(
        model,
        docs,
        cfg.epochs if epochs is None else epochs,
        cfg.lr if lr is None else lr,
        seed,
        batch_size=cfg.batch_size,
        sample_weights=sample_weights,
    )
    return model, [h["total"] for h in hist]
