"""Decoder-only mini language model over label-prefixed notes.

Training sequences look like ``<lblY> <sep> w1 ... wn <eos>``; generation is
prompted with ``<lblY> <sep>`` plus optional context tokens.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import (
    EOS_ID,
    LBL0_ID,
    LBL1_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    LabeledDocument,
    Vocabulary,
    encode_labeled,
    undersample_balanced,
)
from .tensor import (
    Adam,
    Tensor,
    causal_fill,
    cross_entropy,
    embedding,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    parameter,
    reshape,
    softmax_rows,
    transpose,
)

IGNORE = -1
# never sampled into a generated body
BANNED_IDS = (PAD_ID, UNK_ID, SEP_ID, LBL0_ID, LBL1_ID)
GREEDY_BELOW = 1e-3


@dataclass
class GeneratorConfig:
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    context_len: int = 128
    epochs: int = 4
    lr: float = 3e-3
    batch_size: int = 32
    temperature: float = 1.0
    top_k: int = 40
    max_new_tokens: int = 60
    sample_batch: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.context_len < 4:
            raise ValueError("context_len must be at least 4")


@dataclass
class PromptSpec:
    label: int
    context: list[str] = field(default_factory=list)
    temperature: float = 1.0
    top_k: int = 40
    max_new_tokens: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("prompt label must be 0 or 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


class GeneratorModel:
    kind = "genlm"

    def __init__(self, vocab: Vocabulary, config: GeneratorConfig, params: dict[str, Tensor]):
        self.vocab = vocab
        self.config = config
        self.params = params

    @classmethod
    def init(cls, vocab: Vocabulary, config: GeneratorConfig, seed: int = 0) -> "GeneratorModel":
        rng = np.random.default_rng(seed)
        d, v, L = config.d_model, len(vocab), config.context_len
        std = 0.02
        proj_std = std / math.sqrt(2 * config.n_layers)
        params = {"tok_emb": parameter(rng.normal(0, std, (v, d))), "pos_emb": parameter(rng.normal(0, std, (L, d)))}
        for i in range(config.n_layers):
            pre = f"h{i}."
            params[pre + "ln1.g"] = parameter(np.ones(d))
            params[pre + "ln1.b"] = parameter(np.zeros(d))
            for name in ("wq", "wk", "wv"):
                params[pre + name] = parameter(rng.normal(0, std, (d, d)))
                params[pre + "b" + name[1]] = parameter(np.zeros(d))
            params[pre + "wo"] = parameter(rng.normal(0, proj_std, (d, d)))
            params[pre + "bo"] = parameter(np.zeros(d))
            params[pre + "ln2.g"] = parameter(np.ones(d))
            params[pre + "ln2.b"] = parameter(np.zeros(d))
            params[pre + "fc1"] = parameter(rng.normal(0, std, (d, 4 * d)))
            params[pre + "fc1.b"] = parameter(np.zeros(4 * d))
            params[pre + "fc2"] = parameter(rng.normal(0, proj_std, (4 * d, d)))
            params[pre + "fc2.b"] = parameter(np.zeros(d))
        params["lnf.g"] = parameter(np.ones(d))
        params["lnf.b"] = parameter(np.zeros(d))
        return cls(vocab, config, params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def hyperparameters(self) -> dict:
        return asdict(self.config)

    def _attention(self, x: Tensor, pre: str, B: int, T: int) -> Tensor:
        p = self.params
        H = self.config.n_heads
        dh = self.config.d_model // H

        def heads(t: Tensor) -> Tensor:
            return reshape(transpose(reshape(t, (B, T, H, dh)), (0, 2, 1, 3)), (B * H, T, dh))

        q = heads(matmul(x, p[pre + "wq"]) + p[pre + "bq"])
        k = heads(matmul(x, p[pre + "wk"]) + p[pre + "bk"])
        v = heads(matmul(x, p[pre + "wv"]) + p[pre + "bv"])
        att = softmax_rows(causal_fill(matmul(q, transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))))
        y = reshape(transpose(reshape(matmul(att, v), (B, H, T, dh)), (0, 2, 1, 3)), (B * T, -1))
        return matmul(y, p[pre + "wo"]) + p[pre + "bo"]

    def forward(self, idx: np.ndarray) -> Tensor:
        """Next-token logits for every position, shape [B*T, |V|]."""
        idx = np.asarray(idx, dtype=np.int64)
        B, T = idx.shape
        if T > self.config.context_len:
            raise ValueError(f"sequence length {T} exceeds context length {self.config.context_len}")
        p = self.params
        pos = np.broadcast_to(np.arange(T), (B, T))
        x = reshape(embedding(p["tok_emb"], idx) + embedding(p["pos_emb"], pos), (B * T, -1))
        for i in range(self.config.n_layers):
            pre = f"h{i}."
            x = x + self._attention(layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"]), pre, B, T)
            h = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            x = x + matmul(gelu(matmul(h, p[pre + "fc1"]) + p[pre + "fc1.b"]), p[pre + "fc2"]) + p[pre + "fc2.b"]
        x = layer_norm(x, p["lnf.g"], p["lnf.b"])
        return matmul(x, transpose(p["tok_emb"]))


def _pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Inputs and shifted targets; padded target slots hold IGNORE."""
    T = max(len(s) for s in seqs) - 1
    inputs = np.full((len(seqs), T), PAD_ID, dtype=np.int64)
    targets = np.full((len(seqs), T), IGNORE, dtype=np.int64)
    for i, s in enumerate(seqs):
        inputs[i, : len(s) - 1] = s[:-1]
        targets[i, : len(s) - 1] = s[1:]
    return inputs, targets


def lm_loss(model: GeneratorModel, seqs: Sequence[Sequence[int]]) -> Tensor:
    inputs, targets = _pad_batch(seqs)
    return cross_entropy(model.forward(inputs), targets.ravel(), ignore_index=IGNORE)


def lm_train(
    model: GeneratorModel,
    sequences: Sequence[Sequence[int]],
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> tuple[GeneratorModel, list[float]]:
    """Minimize next-token cross-entropy; returns the per-epoch mean loss."""
    if not sequences:
        raise ValueError("lm_train: no sequences")
    for s in sequences:
        if len(s) > model.config.context_len:
            raise ValueError(f"lm_train: sequence of length {len(s)} exceeds context length {model.config.context_len}")
        if len(s) < 2:
            raise ValueError("lm_train: sequences need at least two tokens")
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(sequences))
        losses = []
        for start in range(0, len(order), batch_size):
            loss = lm_loss(model, [sequences[i] for i in order[start:start + batch_size]])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return model, history


def encode_for_lm(model: GeneratorModel, docs: Sequence[LabeledDocument]) -> list[list[int]]:
    max_len = min(model.config.context_len, 128)
    return [encode_labeled(d, model.vocab, max_len) for d in docs]


def lm_finetune(
    model: GeneratorModel,
    train_docs: Sequence[LabeledDocument],
    balanced: bool,
    seed: int,
    epochs: int | None = None,
    lr: float | None = None,
) -> tuple[GeneratorModel, list[float]]:
    """Fine-tune on the training notes, optionally after random under-sampling."""
    docs = undersample_balanced(train_docs, seed) if balanced else list(train_docs)
    cfg = model.config
    return lm_train(
        model,
        encode_for_lm(model, docs),
        cfg.epochs if epochs is None else epochs,
        cfg.lr if lr is None else lr,
        seed,
        batch_size=cfg.batch_size,
    )


def perplexity(model: GeneratorModel, docs: Sequence[LabeledDocument], batch_size: int = 64) -> float:
    """exp of the token-weighted mean next-token cross-entropy."""
    seqs = encode_for_lm(model, docs)
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(seqs), batch_size):
            batch = seqs[start:start + batch_size]
            n = sum(len(s) - 1 for s in batch)
            total += lm_loss(model, batch).item() * n
            count += n
    return math.exp(total / count)


# ----------------------------------------------------------------- sampling


def _next_token(logits: np.ndarray, prompt: PromptSpec, rng: np.random.Generator) -> int:
    z = logits.copy()
    z[list(BANNED_IDS)] = -np.inf
    if prompt.temperature < GREEDY_BELOW:
        return int(np.argmax(z))
    allowed = int(np.isfinite(z).sum())
    k = min(prompt.top_k, allowed)
    if k < len(z):
        cutoff = np.partition(z, len(z) - k)[len(z) - k]
        z[z < cutoff] = -np.inf
    probs = softmax_rows(Tensor(z / prompt.temperature)).data
    return int(rng.choice(len(z), p=probs))


def sample_ids(model: GeneratorModel, prompts: Sequence[PromptSpec], batch_size: int | None = None) -> list[list[int]]:
    """Generated body ids (context included, label/SEP prefix and EOS excluded) per prompt.

    Prompts are decoded together in batches; each draws from its own
    generator seeded by ``prompt.seed``.
    """
    batch_size = batch_size or model.config.sample_batch
    out: list[list[int]] = []
    for start in range(0, len(prompts), batch_size):
        out.extend(_sample_group(model, prompts[start:start + batch_size]))
    return out


def _sample_group(model: GeneratorModel, prompts: Sequence[PromptSpec]) -> list[list[int]]:
    L = model.config.context_len
    seqs = []
    limits = []
    for p in prompts:
        ctx = model.vocab.encode(p.context)[: max(L - 3, 0)]
        seq = [LBL1_ID if p.label else LBL0_ID, SEP_ID, *ctx]
        seqs.append(seq)
        limits.append(min(len(seq) + p.max_new_tokens, L))
    rngs = [np.random.default_rng(p.seed) for p in prompts]
    active = [i for i in range(len(prompts)) if len(seqs[i]) < limits[i]]
    while active:
        T = max(len(seqs[i]) for i in active)
        batch = np.full((len(active), T), PAD_ID, dtype=np.int64)
        for r, i in enumerate(active):
            batch[r, : len(seqs[i])] = seqs[i]
        with no_grad():
            logits = model.forward(batch).data.reshape(len(active), T, -1)
        still = []
        for r, i in enumerate(active):
            tok = _next_token(logits[r, len(seqs[i]) - 1], prompts[i], rngs[i])
            seqs[i].append(tok)
            if tok != EOS_ID and len(seqs[i]) < limits[i]:
                still.append(i)
        active = still
    bodies = []
    for s in seqs:
        body = s[2:]
        if EOS_ID in body:
            body = body[: body.index(EOS_ID)]
        bodies.append(body)
    return bodies


def sample_many(
    model: GeneratorModel, prompts: Sequence[PromptSpec], ids: Sequence[str] | None = None
) -> list[LabeledDocument | None]:
    """Synthetic documents for each prompt; ``None`` where the body came out empty."""
    ids = ids or [f"syn-{p.seed}-{i}" for i, p in enumerate(prompts)]
    docs: list[LabeledDocument | None] = []
    for doc_id, p, body in zip(ids, prompts, sample_ids(model, prompts)):
        text = " ".join(model.vocab.decode(body))
        docs.append(LabeledDocument(doc_id, p.label, text, "synthetic") if text else None)
    return docs


def sample(model: GeneratorModel, prompt: PromptSpec, doc_id: str | None = None) -> LabeledDocument | None:
    return sample_many(model, [prompt], None if doc_id is None else [doc_id])[0]
