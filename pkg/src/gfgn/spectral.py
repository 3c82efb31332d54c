"""Eigendecomposition of small Laplacians and the polynomial filter (I - sL)^K."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph import SparseOperator
from .tensor import Tensor, scale, spmm, sub


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T

    def residuals(self, L: np.ndarray) -> tuple[float, float]:
        """(||U^T U - I||_inf, ||L U - U diag(lambda)||_inf)."""
        U = self.eigenvectors
        ortho = np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) if U.size else 0.0
        resid = np.max(np.abs(L @ U - U * self.eigenvalues)) if U.size else 0.0
        return float(ortho), float(resid)


@njit(cache=True)
def _jacobi_sweeps(A, Vt, threshold, max_sweeps):
    """In-place cyclic Jacobi; returns the number of sweeps or -1 on failure."""
    n = A.shape[0]
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += A[p, q] * A[p, q]
        if np.sqrt(off) < threshold:
            return sweep
        if sweep == max_sweeps:
            return -1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                d = A[q, q] - A[p, p]
                sgn = -1.0 if d < 0 else 1.0
                # tangent of the rotation angle, overflow-free form
                t = 2.0 * apq * sgn / (abs(d) + np.hypot(d, 2.0 * apq))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app = A[p, p]
                aqq = A[q, q]
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                    A[k, p] = A[p, k]
                    A[k, q] = A[q, k]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                # eigenvectors are kept as rows of Vt
                for k in range(n):
                    vpk = Vt[p, k]
                    vqk = Vt[q, k]
                    Vt[p, k] = c * vpk - s * vqk
                    Vt[q, k] = s * vpk + c * vqk
    return -1


def eig_symmetric(L, max_nodes: int = 512, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Cyclic Jacobi rotations, row by row over the upper triangle.

    Stops when the off-diagonal Frobenius norm drops below ``tol`` (scaled
    by ||L||_F when that exceeds 1). Eigenvalues are returned ascending.
    """
    if isinstance(L, SparseOperator):
        L = L.dense()
    A = np.array(L, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise EigenError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > max_nodes:
        raise EigenError(f"matrix has {n} rows, above the {max_nodes} limit")
    if n and np.max(np.abs(A - A.T)) > 1e-10:
        raise EigenError("matrix is not symmetric to 1e-10")
    A = np.ascontiguousarray(0.5 * (A + A.T))
    Vt = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(A)))
    sweeps = _jacobi_sweeps(A, Vt, threshold, max_sweeps)
    if sweeps < 0:
        raise EigenError(f"Jacobi did not converge in {max_sweeps} sweeps")
    evals = np.diag(A).copy()
    order = np.argsort(evals, kind="stable")
    return EigenDecomposition(evals[order], np.ascontiguousarray(Vt.T[:, order]), sweeps)


def filter_coefficients(eigenvalues, s: float, K: int) -> np.ndarray:
    """Per-frequency gain (1 - s*lambda)^K of K stacked linear smoothing layers."""
    if K < 0:
        raise ValueError(f"layer count must be >= 0, got {K}")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    return (1.0 - s * lam) ** K


def polynomial_filter_apply(L: SparseOperator, h, s: float, K: int) -> Tensor:
    """(I - sL)^K h by K sparse products."""
    if K < 0:
        raise ValueError(f"layer count must be >= 0, got {K}")
    out = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=np.float64).reshape(-1, 1))
    for _ in range(K):
        out = sub(out, scale(spmm(L, out), s))
    return out


def spectral_filter_apply(eig: EigenDecomposition, h, s: float, K: int) -> np.ndarray:
    """U diag((1 - s*lambda)^K) U^T h, the eigenbasis form of the same filter."""
    h = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64).reshape(-1, 1)
    U = eig.eigenvectors
    return U @ (filter_coefficients(eig.eigenvalues, s, K)[:, None] * (U.T @ h))
