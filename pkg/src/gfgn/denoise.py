"""Graph signal denoising: min_f ||f - x||^2 + c f^T L f.

The closed-form minimizer (I + cL)^{-1} x is the reference every gating
layer is measured against; one gradient step from ``x`` is the aggregation
rule the layers generalize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .graph import SparseOperator
from .tensor import Tensor


class InstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class DenoiseProblem:
    x: np.ndarray
    c: float
    L: SparseOperator

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        object.__setattr__(self, "x", x)
        if self.c < 0:
            raise ValueError(f"smoothing coefficient must be >= 0, got {self.c}")
        if not np.all(np.isfinite(x)):
            raise ValueError("noisy signal contains non-finite values")
        if self.L.shape != (x.shape[0], x.shape[0]):
            raise ValueError(f"Laplacian {self.L.shape} does not match signal of length {x.shape[0]}")

    @property
    def n(self):
        return self.x.shape[0]

    def objective(self, f) -> float:
        f = _col(f)
        r = f - self.x
        return float((r * r).sum() + self.c * (f * (self.L.matrix @ f)).sum())

    def gradient(self, f) -> np.ndarray:
        f = _col(f)
        return 2.0 * (f - self.x) + 2.0 * self.c * (self.L.matrix @ f)


def _col(f) -> np.ndarray:
    if isinstance(f, Tensor):
        f = f.data
    f = np.asarray(f, dtype=np.float64)
    return f.reshape(-1, 1) if f.ndim == 1 else f


def denoise_closed_form(p: DenoiseProblem) -> np.ndarray:
    """Solve (I + cL) f = x with a dense Cholesky factorization."""
    if p.n > 4096:
        raise ValueError(f"dense solve is limited to 4096 nodes, got {p.n}")
    M = np.eye(p.n) + p.c * p.L.dense()
    M = 0.5 * (M + M.T)
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), p.x)


def denoise_gradient_step(p: DenoiseProblem, f, eps: float) -> np.ndarray:
    if eps <= 0:
        raise ValueError(f"step size must be positive, got {eps}")
    f = _col(f)
    return f - eps * p.gradient(f)


def max_stable_step(p: DenoiseProblem, lam_max: float = 2.0) -> float:
    """Largest step for which the iteration map I - 2eps(I + cL) is a contraction.

    ``lam_max`` bounds the Laplacian spectrum (2 for any normalized Laplacian).
    """
    return 1.0 / (1.0 + p.c * lam_max)


def denoise_iterate(p: DenoiseProblem, eps: float, max_iters: int = 10_000, tol: float = 1e-12,
                    f0=None) -> tuple[np.ndarray, int]:
    """Repeated gradient steps until the sup-norm update falls below ``tol``.

    Raises InstabilityError when ``eps`` exceeds the stability bound or the
    update norm grows for 10 consecutive steps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    limit = max_stable_step(p)
    if eps >= limit:
        raise InstabilityError(f"step size {eps} >= stability bound {limit:.6g}; use a smaller step")
    f = p.x.copy() if f0 is None else _col(f0).copy()
    prev = np.inf
    growth = 0
    for it in range(1, max_iters + 1):
        nxt = denoise_gradient_step(p, f, eps)
        delta = float(np.max(np.abs(nxt - f))) if f.size else 0.0
        f = nxt
        if delta < tol:
            return f, it
        growth = growth + 1 if delta > prev else 0
        if growth >= 10 or not np.isfinite(delta):
            raise InstabilityError(f"iteration diverging at step {it}; use a smaller step size")
        prev = delta
    return f, max_iters


def smoothness(f, L: SparseOperator) -> float:
    """Quadratic form f^T L f."""
    f = _col(f)
    if f.shape[0] != L.shape[0]:
        raise ValueError(f"signal length {f.shape[0]} does not match operator {L.shape}")
    return float((f * (L.matrix @ f)).sum())
