"""Dense 2-D tensors with a reverse-mode autodiff tape.

Every op appends a record to the tape that is active on the calling thread.
``backward`` walks that tape in exact reverse insertion order, so the order of
gradient accumulation (and therefore every bit of the result) is fixed by the
order in which the forward pass was written.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class _Record:
    kind: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = [Tape()]
    return _local.stack


def active_tape() -> Tape:
    return _stack()[-1]


class Tensor:
    """A 2-D float64 array that may participate in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "tape_id", "_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[int] = None
        self._leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data: np.ndarray, kind: str, inputs: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._leaf = False
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.tape_id = None
    if out.requires_grad:
        tape = active_tape()
        out.tape_id = id(tape)
        tape.records.append(_Record(kind, inputs, out, backward))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, "matmul", (a, b), backward)


def _check_binary(a: Tensor, b: Tensor, kind: str):
    if a.shape == b.shape:
        return "same"
    if b.rows == 1 and b.cols == a.cols:
        return "row"
    if b.cols == 1 and b.rows == a.rows:
        return "col"
    raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, mode: str) -> np.ndarray:
    if mode == "row":
        return g.sum(axis=0, keepdims=True)
    if mode == "col":
        return g.sum(axis=1, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    mode = _check_binary(a, b, "add")

    def backward(g):
        return g, _reduce_to(g, mode)

    return _result(a.data + b.data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    mode = _check_binary(a, b, "sub")

    def backward(g):
        return g, -_reduce_to(g, mode)

    return _result(a.data - b.data, "sub", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product. ``b`` may broadcast as a 1xcols row or a rowsx1 column."""
    a, b = _as_tensor(a), _as_tensor(b)
    mode = _check_binary(a, b, "mul")
    A, B = a.data, b.data

    def backward(g):
        return g * B, _reduce_to(g * A, mode)

    return _result(A * B, "mul", (a, b), backward)


def rsub(alpha: float, a: Tensor) -> Tensor:
    """``alpha - a``."""

    def backward(g):
        return (-g,)

    return _result(alpha - a.data, "rsub", (a,), backward)


def scale(a: Tensor, alpha: float) -> Tensor:
    def backward(g):
        return (alpha * g,)

    return _result(alpha * a.data, "scale", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, "sigmoid", (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), "relu", (a,), backward)


def identity(a: Tensor) -> Tensor:
    return a


ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "relu": relu}


def elementwise(a: Tensor, kind: str, b: Optional[Tensor] = None, alpha: float = 1.0) -> Tensor:
    """Dispatch by name: add, sub, mul, sigmoid, relu or scale."""
    if kind == "scale":
        return scale(a, alpha)
    if kind in ("sigmoid", "relu"):
        return ELEMENTWISE[kind](a)
    if kind not in ELEMENTWISE:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if b is None:
        raise DimensionError(f"{kind} needs a second operand")
    return ELEMENTWISE[kind](a, b)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    p = a.cols

    def backward(g):
        return g[:, :p], g[:, p:]

    return _result(np.concatenate([a.data, b.data], axis=1), "concat_cols", (a, b), backward)


def concat_many(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    rows = {t.rows for t in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat: row counts differ, {[t.shape for t in parts]}")
    bounds = np.cumsum([0] + [t.cols for t in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([t.data for t in parts], axis=1), "concat", tuple(parts), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    n, m = a.shape

    def backward(g):
        full = np.zeros((n, m))
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop].copy(), "slice_cols", (a,), backward)


def block_heads(mats: Sequence[Tensor], m: int) -> Tensor:
    """Assemble per-head (m*w x w) matrices into one (m*K*w x K*w) matrix.

    Input row block ``j`` of head ``k`` lands at rows ``j*K*w + k*w``, so
    ``concat(Z_1, ..., Z_m) @ result`` applies head k to columns k*w:(k+1)*w
    of every Z_j at once.
    """
    K = len(mats)
    w = mats[0].cols
    D = K * w
    out = np.zeros((m * D, D))
    for k, M in enumerate(mats):
        if M.shape != (m * w, w):
            raise DimensionError(f"block_heads: head {k} is {M.shape}, expected {(m * w, w)}")
        for j in range(m):
            out[j * D + k * w:j * D + (k + 1) * w, k * w:(k + 1) * w] = M.data[j * w:(j + 1) * w]

    def backward(g):
        grads = []
        for k in range(K):
            grads.append(np.concatenate(
                [g[j * D + k * w:j * D + (k + 1) * w, k * w:(k + 1) * w] for j in range(m)], axis=0))
        return tuple(grads)

    return _result(out, "block_heads", tuple(mats), backward)


def row_mean(a: Tensor) -> Tensor:
    m = a.rows
    if m == 0:
        raise DimensionError("row_mean of an empty tensor")

    def backward(g):
        return (np.broadcast_to(g / m, a.shape).copy(),)

    return _result(a.data.mean(axis=0, keepdims=True), "row_mean", (a,), backward)


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""

    def backward(g):
        return (np.full(a.shape, g[0, 0]),)

    return _result(np.array([[a.data.sum()]]), "sum", (a,), backward)


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; evaluation mode and ``p == 0`` return ``a`` itself."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        return (g * mask,)

    return _result(a.data * mask, "dropout", (a,), backward)


def spmm(op, h: Tensor) -> Tensor:
    """Sparse (rows x n) operator times dense Tensor[n x d]."""
    mat = op.matrix if hasattr(op, "matrix") else op
    if mat.shape[1] != h.rows:
        raise DimensionError(f"spmm: operator is {mat.shape}, tensor is {h.shape}")
    mat_t = None

    def backward(g):
        nonlocal mat_t
        if mat_t is None:
            mat_t = sp.csr_matrix(mat.T)
        return (np.asarray(mat_t @ g),)

    return _result(np.asarray(mat @ h.data), "spmm", (h,), backward)


def softmax_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-softmax over the rows listed in ``mask``."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    m, C = logits.shape
    if mask.size == 0:
        raise ValueError("softmax_cross_entropy: empty mask")
    if mask.min() < 0 or mask.max() >= m:
        raise ValueError(f"softmax_cross_entropy: mask index outside [0, {m})")
    y = labels[mask]
    if y.min() < 0 or y.max() >= C:
        raise ValueError(f"softmax_cross_entropy: label outside [0, {C})")
    z = logits.data[mask]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    k = mask.size
    loss = -logp[np.arange(k), y].sum() / k

    def backward(g):
        probs = np.exp(logp)
        probs[np.arange(k), y] -= 1.0
        full = np.zeros((m, C))
        np.add.at(full, mask, probs / k)
        return (g[0, 0] * full,)

    return _result(np.array([[loss]]), "softmax_xent", (logits,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._leaf:
        loss.grad = np.ones((1, 1)) if loss.grad is None else loss.grad + 1.0
        return
    tape = next((t for t in _stack() if id(t) == loss.tape_id), None)
    if tape is None:
        raise RuntimeError("loss was not recorded on an active tape")
    upstream = {id(loss): np.ones((1, 1))}
    start = next(i for i in range(len(tape.records) - 1, -1, -1) if tape.records[i].output is loss)
    for rec in reversed(tape.records[: start + 1]):
        g = upstream.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._leaf:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                upstream[key] = gi if key not in upstream else upstream[key] + gi
