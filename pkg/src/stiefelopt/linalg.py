"""Dense matrix primitives used by the manifold machinery.

Matrices are plain 2-d numpy arrays in C (row-major) order, either float32
(training) or float64 (verification).  All functions are pure and preserve
the dtype of their inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "RankDeficientError",
    "householder_qr",
    "matrix_exp",
    "skew_part",
    "require_finite",
    "max_abs",
]


class RankDeficientError(ValueError):
    """A factored matrix does not have full column rank."""


def require_finite(m: np.ndarray, name: str = "matrix") -> None:
    """Raise ValueError if the array contains NaN or Inf."""
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains non-finite entries")


def max_abs(m: np.ndarray) -> float:
    """Largest absolute entry; 0.0 for empty arrays."""
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(m)))


def householder_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full QR factorization of an N x M matrix (M <= N) by Householder
    reflections.

    Returns (q, r) with q an N x N orthogonal matrix, r an N x M upper
    triangular matrix and q @ r == a up to roundoff.  The first M columns
    of q span the column space of a.

    Raises RankDeficientError when some |r_ii| falls below
    N * eps * max|r_jj|, the signal that the input must be redrawn.
    """
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    if a.ndim != 2:
        raise ValueError("householder_qr expects a 2-d array")
    n, m = a.shape
    if m > n:
        raise ValueError(f"householder_qr needs M <= N, got {n}x{m}")
    require_finite(a, "householder_qr input")

    r = a.copy()
    q = np.eye(n, dtype=a.dtype)
    for j in range(m):
        x = r[j:, j]
        norm_x = np.sqrt(np.dot(x, x))
        if norm_x == 0.0:
            continue
        v = x.copy()
        # Reflect onto -sign(x0) * ||x|| * e1 to avoid cancellation.
        sign = 1.0 if x[0] >= 0 else -1.0
        v[0] += sign * norm_x
        beta = 2.0 / np.dot(v, v)
        r[j:, j:] -= beta * np.outer(v, v @ r[j:, j:])
        q[:, j:] -= beta * np.outer(q[:, j:] @ v, v)
    r[np.tril_indices(n=n, k=-1, m=m)] = 0.0  # reflections leave roundoff below the diagonal

    diag = np.abs(np.diagonal(r)[:m])
    tol = n * np.finfo(a.dtype).eps * (diag.max() if m else 0.0)
    if m and diag.min() < tol:
        raise RankDeficientError(
            f"column rank below {m}: min |r_ii| = {diag.min():.3e}, tolerance {tol:.3e}"
        )
    return q, r


def matrix_exp(m: np.ndarray, max_terms: int = 60) -> np.ndarray:
    """Dense matrix exponential sum_k M^k / k! via scaling and squaring.

    Intended as a small-scale reference (k <= 256); the Taylor loop of the
    scaled matrix stops once the running term drops below the dtype's
    machine epsilon.
    """
    m = np.asarray(m)
    if not np.issubdtype(m.dtype, np.floating):
        m = m.astype(np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix_exp expects a square matrix")
    if m.shape[0] > 256:
        raise ValueError("matrix_exp is a reference routine, capped at 256x256")
    require_finite(m, "matrix_exp input")

    eps = np.finfo(m.dtype).eps
    norm = max_abs(m)
    # Scale so the Taylor series of m / 2**s converges in a handful of terms.
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0.5 else 0
    scaled = m / (2.0**s)

    k = np.eye(m.shape[0], dtype=m.dtype)
    total = k.copy()
    for i in range(1, max_terms + 1):
        k = (k @ scaled) / i
        total += k
        if max_abs(k) < eps:
            break
    for _ in range(s):
        total = total @ total
    return total


def skew_part(m: np.ndarray) -> np.ndarray:
    """Skew-symmetric part (M - M^T) / 2 of a square matrix."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("skew_part expects a square matrix")
    return (m - m.T) / 2.0
