"""Central-difference gradient checks for whole models on tiny random graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import load_edges
from .layers import ModelConfig, build_model
from .tensor import Tape, Tensor


@dataclass
class GradReport:
    """``max_rel_err`` uses max(|a|, |n|, 1e-8) as denominator.

    A central difference at h = 1e-5 cannot resolve better than about
    ulp(loss) / 2h ~ 1e-11 in absolute terms, so a gradient that is truly 0
    can show a relative error near 1e-3. ``max_rel_err_resolved`` skips
    elements whose absolute disagreement is below ``atol``.
    """

    model: str
    max_rel_err: float
    worst_param: str
    checked: int
    max_rel_err_resolved: float = 0.0
    atol: float = 1e-9

    def passed(self, tol: float = 1e-4, allow_unresolved: bool = False) -> bool:
        return (self.max_rel_err_resolved if allow_unresolved else self.max_rel_err) < tol


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / den


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to array ``x``, perturbed in place."""
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        out[idx] = (fp - fm) / (2 * h)
    return out


def random_graph(n: int, rng: np.random.Generator, p: float = 0.4):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return load_edges(np.stack([iu[keep], ju[keep]], axis=1), n)


def check_model(model: str, n: int = 6, seed: int = 0, in_dim: int = 5, classes: int = 3,
                heads: int = 2, units: int = 2, lam: float = 1.0, h: float = 1e-5,
                atol: float = 1e-9) -> GradReport:
    """Compare every parameter gradient of a two-layer model with central differences.

    Dropout is off so the loss is a deterministic function of the weights.
    """
    rng = np.random.default_rng(seed)
    g = random_graph(n, rng)
    X = Tensor(rng.standard_normal((n, in_dim)))
    y = rng.integers(0, classes, size=n)
    mask = np.arange(n)
    net = build_model(ModelConfig(model, in_dim, classes, heads, units, lam, 0.0, False, seed))

    def loss_value():
        with Tape():
            logits, _ = net.forward(g, X, training=False)
            return T.softmax_cross_entropy(logits, y, mask).item()

    for p in net.parameters():
        p.zero_grad()
    with Tape():
        logits, _ = net.forward(g, X, training=False)
        T.backward(T.softmax_cross_entropy(logits, y, mask))
    worst, worst_name, count, resolved = 0.0, "", 0, 0.0
    for name, p in net.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        num = numeric_grad(loss_value, p.data, h)
        errs = rel_err(analytic, num)
        err = float(errs.max())
        visible = np.abs(analytic - num) >= atol
        resolved = max(resolved, float(errs[visible].max(initial=0.0)))
        count += p.data.size
        if err >= worst:
            worst, worst_name = err, name
    return GradReport(model, worst, worst_name, count, resolved, atol)
