"""Minimal tape-based reverse-mode differentiation over dense float64 arrays.

Operations executed while a :class:`Tape` is active and that touch a tensor
with ``requires_grad`` are recorded; :func:`backward` replays the tape in
reverse.  Outside a tape every op produces a constant, which doubles as a
no-grad mode for evaluation.  Sparse matrices are constant operands only.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    "active_tape", default=None
)


class Tensor:
    """Dense row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c: float):
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Entry:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records differentiable ops in execution order.

    Use as a context manager; call :meth:`reset` between optimization steps.
    A tape belongs to the thread/context that entered it.
    """

    def __init__(self):
        self.entries: list[_Entry] = []
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> Tape:
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.entries)

    def reset(self) -> None:
        for e in self.entries:
            e.out.tape = None
        self.entries.clear()

    def record(self, out: Tensor, parents, vjp) -> None:
        out.tape = self
        self.entries.append(_Entry(out, tuple(parents), vjp))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for entry in reversed(self.entries):
            g = entry.out.grad
            if g is None:
                continue
            grads = entry.vjp(g)
            for parent, pg in zip(entry.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64)
                else:
                    parent.grad = parent.grad + pg


def current_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that contributed to ``loss``."""
    if loss.tape is None:
        raise ValueError("loss was not recorded on a tape (no parameter requires grad?)")
    loss.tape.backward(loss)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, vjp)
    return out


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Constant CSR matrix operand."""

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(init=False, repr=False)
    _csr_t: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.indptr) != self.rows + 1 or self.indptr[-1] != len(self.indices):
            raise ShapeError("invalid CSR structure")
        if len(self.values) != len(self.indices):
            raise ShapeError("CSR values/indices length mismatch")
        m = sp.csr_matrix((self.values, self.indices, self.indptr), shape=(self.rows, self.cols))
        object.__setattr__(self, "_csr", m)
        object.__setattr__(self, "_csr_t", m.T.tocsr())

    @classmethod
    def identity(cls, n: int) -> SparseMatrix:
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def from_scipy(cls, m) -> SparseMatrix:
        m = sp.csr_matrix(m)
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr.astype(np.int64),
                   m.indices.astype(np.int64), m.data.astype(np.float64))

    def dot(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr @ x)

    def rdot(self, x: np.ndarray) -> np.ndarray:
        """``S^T @ x``."""
        return np.asarray(self._csr_t @ x)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()


# -- operations --------------------------------------------------------


def _check_2d(*ts: Tensor, op: str) -> None:
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeError(f"{op} expects 2-D operands, got shape {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_2d(a, b, op="matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def vjp(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    d = as_tensor(d)
    if d.data.ndim != 2 or s.cols != d.shape[0]:
        raise ShapeError(f"spmm shape mismatch ({s.rows}, {s.cols}) @ {d.shape}")
    return _make(s.dot(d.data), (d,), lambda g: (s.rdot(g),), "spmm")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make(c * x.data, (x,), lambda g: (c * g,), "scale")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_2d(a, b, op="concat_cols")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols row mismatch {a.shape} vs {b.shape}")
    k = a.shape[1]
    return _make(np.concatenate([a.data, b.data], axis=1), (a, b),
                 lambda g: (g[:, :k], g[:, k:]), "concat_cols")


def gather_rows(x: Tensor, ids) -> Tensor:
    """Rows ``x[ids]``; backward scatter-adds into repeated ids."""
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    n = x.shape[0]

    def vjp(g):
        k = len(ids)
        scatter = sp.csr_matrix((np.ones(k), (ids % n, np.arange(k))), shape=(n, k))
        return (np.asarray(scatter @ g),)

    if len(ids) and (ids.min() < -n or ids.max() >= n):
        raise IndexError(f"row id out of range for {n} rows")
    return _make(x.data[ids], (x,), vjp, "gather_rows")


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "rowwise_dot")
    _check_2d(a, b, op="rowwise_dot")

    def vjp(g):
        g = g[:, None]
        return g * b.data, g * a.data

    return _make(np.einsum("ij,ij->i", a.data, b.data), (a, b), vjp, "rowwise_dot")


def where_rows(mask, a: Tensor, b: Tensor) -> Tensor:
    """Row ``i`` from ``a`` where ``mask[i]`` else from ``b`` (copied exactly)."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "where_rows")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (a.shape[0],):
        raise ShapeError(f"mask of shape {mask.shape} for {a.shape[0]} rows")
    m = mask[:, None]
    return _make(np.where(m, a.data, b.data), (a, b),
                 lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)), "where_rows")


def detach(x: Tensor) -> Tensor:
    return Tensor(as_tensor(x).data)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mse")
    if pred.data.size == 0:
        return _make(np.array(0.0), (pred, target), lambda g: (None, None), "mse")
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _make(np.array(np.mean(diff * diff)), (pred, target), vjp, "mse")


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits, numerically stable."""
    logits = as_tensor(logits)
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"labels shape {y.shape} != logits shape {logits.shape}")
    x = logits.data
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    return _make(np.array(loss.mean()), (logits,),
                 lambda g: (g * (_sigmoid(x) - y) / n,), "bce_with_logits")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy for integer class labels."""
    logits = as_tensor(logits)
    _check_2d(logits, op="cross_entropy")
    y = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(y))
    n = len(y)

    def vjp(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return (g * p / n,)

    return _make(np.array(-logp[rows, y].mean()), (logits,), vjp, "cross_entropy")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- optimizers ----------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; ``None`` grads count as zero."""
    b1, b2 = betas
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p.data = p.data - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], lr: float) -> None:
    for p, g in zip(params, grads):
        if g is not None:
            p.data = p.data - lr * g


class Optimizer:
    """Adam or plain SGD over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], kind: str = "adam", lr: float = 1e-3,
                 weight_decay: float = 0.0):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = list(params)
        self.kind = kind
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        if self.weight_decay:
            grads = [(np.zeros_like(p.data) if g is None else g) + self.weight_decay * p.data
                     for p, g in zip(self.params, grads)]
        if self.kind == "adam":
            adam_step(self.params, grads, self.state, self.lr)
        else:
            sgd_step(self.params, grads, self.lr)


# -- verification ----------------------------------------------------------


def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(x.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(x.copy())).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
                      floor: float = 1e-6) -> float:
    """Max elementwise relative error between tape and central-difference gradients.

    The denominator is ``max(|analytic|, |numeric|, floor)``.
    """
    x = np.array(as_tensor(x).data, dtype=np.float64)
    param = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(param)
        tape.backward(loss)
    analytic = param.grad if param.grad is not None else np.zeros_like(x)
    numeric = numeric_grad(f, x, eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0
