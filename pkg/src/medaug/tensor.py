"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations needed by the mini language model and the bag-of-words
classifier are provided. Broadcasting is limited to adding a bias vector
along the last axis; everything else requires matching shapes.

Each op records its parents and a closure that pushes the output gradient
back into them. ``Tensor.backward`` walks the recorded graph in reverse
topological order, visiting every node once.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> list[float]:
        """Row-major flat copy of the entries."""
        return self.data.ravel().tolist()

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = None
    out.op = op
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    bias = b.data.ndim == 1 and a.data.ndim > 1 and b.shape[0] == a.shape[-1]
    if a.shape != b.shape and not bias:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g)
        out._backward = _backward
    return out


def neg(a: Tensor) -> Tensor:
    out = _result(-a.data, (a,), "neg")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(-g)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor or a python scalar."""
    if isinstance(b, (int, float)):
        c = float(b)
        out = _result(a.data * c, (a,), "scale")
        if out.requires_grad:
            out._backward = lambda g: a._accumulate(g * c)
        return out
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward(g):
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)
        out._backward = _backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched product of 3-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    ok = (a.data.ndim == b.data.ndim == 2 and a.shape[1] == b.shape[0]) or (
        a.data.ndim == b.data.ndim == 3 and a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1]
    )
    if not ok:
        raise ValueError(f"matmul: dimension mismatch between {a.shape} and {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _backward(g):
            if a.requires_grad:
                a._accumulate(g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                b._accumulate(np.swapaxes(a.data, -1, -2) @ g)
        out._backward = _backward
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _result(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.reshape(a.shape))
    return out


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.data.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = _result(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.transpose(inverse))
    return out


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    out = _result(np.array(a.data.sum()), (a,), "sum")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.full_like(a.data, float(g)))
    return out


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = _result(np.array(a.data.sum() / n), (a,), "mean")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.full_like(a.data, float(g) / n))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _result(y, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * (1.0 - y * y))
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = _result(0.5 * x * (1.0 + t), (a,), "gelu")
    if out.requires_grad:
        def _backward(g):
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
            a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))
        out._backward = _backward
    return out


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of ``table``; output shape is ``idx.shape + (dim,)``."""
    idx = np.asarray(idx, dtype=np.int64)
    out = _result(table.data[idx], (table,), "embedding")
    if out.requires_grad:
        def _backward(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx.ravel(), g.reshape(-1, table.shape[1]))
            table._accumulate(full)
        out._backward = _backward
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    x = as_tensor(x)
    y = _softmax(x.data)
    out = _result(y, (x,), "softmax")
    if out.requires_grad:
        def _backward(g):
            x._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))
        out._backward = _backward
    return out


def causal_fill(scores: Tensor) -> Tensor:
    """Set entries above the diagonal of the last two axes to -inf."""
    t = scores.shape[-1]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    data = scores.data.copy()
    data[..., mask] = -np.inf
    out = _result(data, (scores,), "causal_fill")
    if out.requires_grad:
        def _backward(g):
            g = g.copy()
            g[..., mask] = 0.0
            scores._accumulate(g)
        out._backward = _backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the last axis, then scale by ``gain`` and shift by ``bias``."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _result(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if out.requires_grad:
        def _backward(g):
            n = x.shape[-1]
            if gain.requires_grad:
                gain._accumulate((g * xhat).reshape(-1, n).sum(axis=0))
            if bias.requires_grad:
                bias._accumulate(g.reshape(-1, n).sum(axis=0))
            if x.requires_grad:
                gx = g * gain.data
                x._accumulate(
                    inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
                )
        out._backward = _backward
    return out


def cross_entropy(
    logits: Tensor,
    targets: Sequence[int] | np.ndarray,
    weights: Sequence[float] | np.ndarray | None = None,
    ignore_index: int | None = None,
) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over rows.

    Rows whose target equals ``ignore_index`` are excluded from both the sum
    and the count. With ``weights`` each row's loss is scaled before summing;
    the divisor stays the number of counted rows, so all-zero weights give a
    zero loss and zero gradient.
    """
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be 2-D, got shape {logits.shape}")
    m, c = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (m,):
        raise ValueError(f"cross_entropy: {t.shape[0] if t.ndim else 0} targets for {m} rows")
    keep = np.ones(m, dtype=bool) if ignore_index is None else t != ignore_index
    if np.any((t[keep] < 0) | (t[keep] >= c)):
        bad = int(t[keep][(t[keep] < 0) | (t[keep] >= c)][0])
        raise IndexError(f"cross_entropy: target {bad} out of range for {c} classes")
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    w = np.where(keep, w, 0.0)
    count = max(int(keep.sum()), 1)
    safe_t = np.where(keep, t, 0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(m), safe_t]
    out = _result(np.array((w * nll).sum() / count), (logits,), "cross_entropy")
    if out.requires_grad:
        def _backward(g):
            p = np.exp(z - logsum[:, None])
            p[np.arange(m), safe_t] -= 1.0
            logits._accumulate(p * (w / count * float(g))[:, None])
        out._backward = _backward
    return out


KL_FLOOR = 1e-12


def _check_distribution(name: str, p: np.ndarray) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError(f"kl_divergence: {name} is not a probability distribution")


def kl_divergence(p, q) -> Tensor:
    """KL(p || q) = sum_i p_i ln(p_i / q_i), with 0 ln 0 = 0.

    Both arguments are probability rows (1-D) or stacks of rows (2-D); for
    stacks the result is the per-row divergence vector. Entries of ``q`` are
    floored at 1e-12 before the log. Gradients flow into whichever argument
    is tracked, so callers can put the trainable distribution on either side.
    """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape or p.data.ndim not in (1, 2):
        raise ValueError(f"kl_divergence: incompatible shapes {p.shape} and {q.shape}")
    _check_distribution("p", p.data)
    _check_distribution("q", q.data)
    qc = np.maximum(q.data, KL_FLOOR)
    pos = p.data > 0
    logratio = np.where(pos, np.log(np.where(pos, p.data, 1.0)) - np.log(qc), 0.0)
    terms = p.data * logratio
    out = _result(np.maximum(terms.sum(axis=-1), 0.0), (p, q), "kl")
    if out.requires_grad:
        def _backward(g):
            g = np.asarray(g)[..., None] if p.data.ndim == 2 else g
            if q.requires_grad:
                q._accumulate(g * np.where(q.data > KL_FLOOR, -p.data / qc, 0.0))
            if p.requires_grad:
                pc = np.maximum(p.data, KL_FLOOR)
                p._accumulate(g * (np.log(pc) - np.log(qc) + 1.0))
        out._backward = _backward
    return out


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"adam_step: dimension mismatch, parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)


# ------------------------------------------------------------ grad checking


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x`` and central differences.

    ``x`` is perturbed in place, so ``f`` may ignore its argument and read
    ``x`` through a model that holds it. The error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    x.requires_grad = was
    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(x).item()
            flat[i] = orig - step
            lo = f(x).item()
            flat[i] = orig
            num = (hi - lo) / (2 * step)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst


def grad_check_all(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5) -> float:
    """``grad_check`` over every tensor in ``params``; ``f`` closes over them."""
    params = list(params)
    for p in params:
        p.grad = None
    return max(grad_check(lambda _x: f(), p, step) for p in params)
