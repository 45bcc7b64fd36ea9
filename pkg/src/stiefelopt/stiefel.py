"""The Stiefel manifold St(n, N) and its homogeneous-space machinery.

St(n, N) is the set of N x n matrices with orthonormal columns.  The
orthogonal group O(N) acts transitively on it, which gives every point the
same, *global* tangent space: the horizontal Lie-algebra block matrices

    [[ a, -b.T ],
     [ b,  0   ]]        a: n x n skew-symmetric, b: (N-n) x n arbitrary.

Optimizer state lives in these (a, b) coordinates.  Moving between a tangent
vector at a point Y and the global coordinates needs a *section*: an
orthogonal N x N matrix whose first n columns are Y.  Geodesics are computed
exactly through a small 2n x 2n series, never through an N x N exponential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    RankDeficientError,
    householder_qr,
    max_abs,
    require_finite,
    skew_part,
)

__all__ = [
    "NonConvergenceError",
    "StiefelPoint",
    "TangentVector",
    "HorizontalElement",
    "SectionMatrix",
    "default_orth_tol",
    "random_stiefel",
    "riemannian_gradient",
    "canonical_metric",
    "skew_generator",
    "section",
    "lift",
    "lift_with_section",
    "phi1_series",
    "geodesic_step",
    "reorthonormalize",
    "random_tangent",
]

_REDRAW_LIMIT = 5


class NonConvergenceError(RuntimeError):
    """The retraction series did not converge; reduce the step size."""


def default_orth_tol(dtype) -> float:
    """Orthonormality tolerance: 1e-5 in single precision, 1e-11 in double."""
    return 1e-5 if np.dtype(dtype) == np.float32 else 1e-11


@dataclass(frozen=True)
class StiefelPoint:
    """A point Y on St(n, N): an N x n matrix with orthonormal columns.

    The array is treated as immutable.  Constructing does not validate;
    call validate() or orth_defect() where the invariant matters.
    """

    matrix: np.ndarray

    @property
    def ambient_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def dtype(self):
        return self.matrix.dtype

    def orth_defect(self) -> float:
        """max |Y^T Y - I|, always measured in double precision."""
        y = self.matrix.astype(np.float64, copy=False)
        return max_abs(y.T @ y - np.eye(self.subspace_dim))

    def validate(self, tol: float | None = None) -> None:
        if self.matrix.ndim != 2 or self.subspace_dim > self.ambient_dim:
            raise ValueError("StiefelPoint needs an N x n array with n <= N")
        require_finite(self.matrix, "StiefelPoint")
        tol = default_orth_tol(self.dtype) if tol is None else tol
        defect = self.orth_defect()
        if defect > tol:
            raise ValueError(f"columns not orthonormal: defect {defect:.3e} > {tol:.3e}")


@dataclass(frozen=True)
class TangentVector:
    """An element of the tangent space at a point: Y^T D must be skew."""

    point: StiefelPoint
    matrix: np.ndarray

    def tangency_defect(self) -> float:
        y = self.point.matrix
        return max_abs(y.T @ self.matrix + self.matrix.T @ y)

    def validate(self, tol: float = 1e-8) -> None:
        if self.matrix.shape != self.point.matrix.shape:
            raise ValueError("tangent vector shape differs from its base point")
        defect = self.tangency_defect()
        if defect > tol:
            raise ValueError(f"not tangent: defect {defect:.3e} > {tol:.3e}")


@dataclass(frozen=True)
class HorizontalElement:
    """Global tangent coordinates (a, b) for the block matrix
    [[a, -b.T], [b, 0]], which is never materialized in hot paths.

    a is n x n and skew-symmetric, b is (N-n) x n and unconstrained.
    """

    a: np.ndarray
    b: np.ndarray

    @property
    def ambient_dim(self) -> int:
        return self.a.shape[0] + self.b.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.a.shape[1]

    def skew_defect(self) -> float:
        return max_abs(self.a + self.a.T)

    def validate(self, tol: float = 1e-8) -> None:
        n = self.a.shape[1]
        if self.a.shape != (n, n) or self.b.shape[1] != n:
            raise ValueError("block shapes must be n x n and (N-n) x n")
        if self.skew_defect() > tol:
            raise ValueError(f"a block not skew-symmetric within {tol:.1e}")

    def to_dense(self) -> np.ndarray:
        """Materialize the full N x N skew matrix (tests and oracles only)."""
        n_low = self.b.shape[0]
        zero = np.zeros((n_low, n_low), dtype=self.a.dtype)
        return np.block([[self.a, -self.b.T], [self.b, zero]])

    def to_flat(self) -> np.ndarray:
        """Flat coordinate layout: the a entries followed by the b entries."""
        return np.concatenate([self.a.ravel(), self.b.ravel()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, ambient_dim: int, subspace_dim: int) -> "HorizontalElement":
        n, nn = subspace_dim, subspace_dim * subspace_dim
        a = flat[:nn].reshape(n, n)
        b = flat[nn:].reshape(ambient_dim - n, n)
        return cls(a=a, b=b)

    @classmethod
    def zero(cls, ambient_dim: int, subspace_dim: int, dtype=np.float64) -> "HorizontalElement":
        return cls(
            a=np.zeros((subspace_dim, subspace_dim), dtype=dtype),
            b=np.zeros((ambient_dim - subspace_dim, subspace_dim), dtype=dtype),
        )

    def scaled(self, factor: float) -> "HorizontalElement":
        return HorizontalElement(a=self.a * factor, b=self.b * factor)

    def with_skew_a(self) -> "HorizontalElement":
        """Project the a block back onto the skew-symmetric matrices."""
        return HorizontalElement(a=skew_part(self.a), b=self.b)


@dataclass(frozen=True)
class SectionMatrix:
    """An orthogonal N x N matrix whose first n columns are the point it
    was built for (applying it to [I_n; 0] recovers the point)."""

    matrix: np.ndarray

    def orth_defect(self) -> float:
        lam = self.matrix.astype(np.float64, copy=False)
        return max_abs(lam.T @ lam - np.eye(lam.shape[0]))

    def validate(self, point: StiefelPoint | None = None, tol: float | None = None) -> None:
        lam = self.matrix
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise ValueError("section must be square")
        tol = default_orth_tol(lam.dtype) if tol is None else tol
        if self.orth_defect() > tol:
            raise ValueError("section is not orthogonal within tolerance")
        if point is not None:
            n = point.subspace_dim
            if max_abs(lam[:, :n] - point.matrix) != 0.0:
                raise ValueError("section does not start with its base point")


def random_stiefel(ambient_dim: int, subspace_dim: int, rng: np.random.Generator,
                   dtype=np.float64) -> StiefelPoint:
    """Draw a point by orthonormalizing a Gaussian sample: the first
    subspace_dim columns of the Q factor of an N x n standard-normal draw."""
    if subspace_dim > ambient_dim:
        raise ValueError("subspace dimension exceeds ambient dimension")
    for _ in range(_REDRAW_LIMIT):
        sample = rng.standard_normal((ambient_dim, subspace_dim)).astype(dtype)
        try:
            q, _ = householder_qr(sample)
        except RankDeficientError:
            continue
        return StiefelPoint(matrix=np.ascontiguousarray(q[:, :subspace_dim]))
    raise RankDeficientError(f"no full-rank Gaussian sample in {_REDRAW_LIMIT} draws")


def riemannian_gradient(point: StiefelPoint, euclid_grad: np.ndarray) -> TangentVector:
    """Convert a Euclidean gradient G into the tangent vector G - Y G^T Y
    that represents it under the canonical metric."""
    y = point.matrix
    if euclid_grad.shape != y.shape:
        raise ValueError(f"gradient shape {euclid_grad.shape} != point shape {y.shape}")
    return TangentVector(point=point, matrix=euclid_grad - y @ (euclid_grad.T @ y))


def canonical_metric(point: StiefelPoint, v1: TangentVector, v2: TangentVector) -> float:
    """Canonical inner product Tr(V1^T (I - Y Y^T / 2) V2) of two tangent
    vectors at the same point."""
    if v1.point.matrix is not v2.point.matrix and max_abs(v1.point.matrix - v2.point.matrix) != 0.0:
        raise ValueError("tangent vectors live at different base points")
    y = point.matrix
    corrected = v2.matrix - 0.5 * y @ (y.T @ v2.matrix)
    return float(np.sum(v1.matrix * corrected))


def skew_generator(point: StiefelPoint, tangent: TangentVector,
                   tol: float | None = None) -> np.ndarray:
    """The unique skew N x N matrix Z with Z Y = Delta for a tangent Delta:

        Z = (I - Y Y^T / 2) Delta Y^T - Y Delta^T (I - Y Y^T / 2).
    """
    if tol is None:
        tol = float(np.sqrt(np.finfo(tangent.matrix.dtype).eps))
    defect = tangent.tangency_defect()
    if defect > tol * (1.0 + max_abs(tangent.matrix)):
        raise ValueError(f"input is not tangent at the point (defect {defect:.3e})")
    y = point.matrix
    d = tangent.matrix
    half_proj = d - 0.5 * y @ (y.T @ d)  # (I - Y Y^T / 2) Delta
    return half_proj @ y.T - y @ half_proj.T


def section(point: StiefelPoint, rng: np.random.Generator,
            scrub: bool = True) -> SectionMatrix:
    """Complete a point to an orthogonal N x N matrix.

    A Gaussian N x (N-n) sample has its Y-component projected out and is
    orthonormalized; the resulting columns are orthonormal to Y, so
    [Y | completion] is orthogonal and maps [I_n; 0] back to Y.

    scrub=True (the default) repeats the projection and cleans the
    factored columns once more: a single projector pass leaves a residual
    proportional to Y's own orthonormality defect and the factorization
    can leak span of size eps / sigma_min of the sample, and composed
    geodesic steps amplify both geometrically.  Disabling the scrub exists
    only as a corruption hook for negative controls.
    """
    y = point.matrix
    n_amb, n_sub = y.shape
    if n_amb == n_sub:
        return SectionMatrix(matrix=y.copy())
    for _ in range(_REDRAW_LIMIT):
        sample = rng.standard_normal((n_amb, n_amb - n_sub)).astype(y.dtype)
        sample -= y @ (y.T @ sample)
        if scrub:
            sample -= y @ (y.T @ sample)
        try:
            q, _ = householder_qr(sample)
        except RankDeficientError:
            continue
        completion = q[:, : n_amb - n_sub]
        if scrub:
            completion -= y @ (y.T @ completion)
        lam = np.empty((n_amb, n_amb), dtype=y.dtype)
        lam[:, :n_sub] = y
        lam[:, n_sub:] = completion
        return SectionMatrix(matrix=lam)
    raise RankDeficientError(f"no full-rank completion sample in {_REDRAW_LIMIT} draws")


def lift_with_section(point: StiefelPoint, tangent: TangentVector,
                      sec: SectionMatrix) -> HorizontalElement:
    """Express a tangent vector in the global (a, b) coordinates attached to
    the given section: conjugate its skew generator by the section and read
    off the blocks."""
    lam = sec.matrix
    n = point.subspace_dim
    z = skew_generator(point, tangent)
    coords = lam.T @ z @ lam
    return HorizontalElement(
        a=np.ascontiguousarray(coords[:n, :n]),
        b=np.ascontiguousarray(coords[n:, :n]),
    )


def lift(point: StiefelPoint, tangent: TangentVector, rng: np.random.Generator,
         scrub: bool = True) -> tuple[SectionMatrix, HorizontalElement]:
    """Lift a tangent vector into the global tangent space.

    Computes a fresh section for the point, then the (a, b) coordinates of
    the tangent vector relative to it.  Returns both; the section is needed
    again by the retraction.
    """
    sec = section(point, rng, scrub=scrub)
    return sec, lift_with_section(point, tangent, sec)


def phi1_series(s: np.ndarray, max_terms: int = 100) -> np.ndarray:
    """Taylor series of phi1(S) = sum_{k>=1} S^(k-1) / k!, the factor with
    exp(S) = I + S phi1(S).

    The loop adds terms while the running product stays above the dtype's
    machine epsilon in max-abs norm, and gives up after max_terms.
    """
    s = np.asarray(s)
    if not np.issubdtype(s.dtype, np.floating):
        s = s.astype(np.float64)
    require_finite(s, "phi1_series input")
    eps = np.finfo(s.dtype).eps
    out = np.eye(s.shape[0], dtype=s.dtype)
    product = out.copy()
    t = 1
    while max_abs(product) >= eps:
        t += 1
        if t > max_terms:
            raise NonConvergenceError(
                f"series still above eps after {max_terms} terms; the step is too large"
            )
        with np.errstate(over="ignore", invalid="ignore"):
            product = (product @ s) / t
        if not np.isfinite(product).all():
            raise NonConvergenceError("series overflowed; the step is too large")
        out += product
    return out


def geodesic_step(point: StiefelPoint, sec: SectionMatrix, velocity: HorizontalElement,
                  repair: bool = False) -> StiefelPoint:
    """Follow the geodesic generated by a global tangent element for unit
    time, starting at the section's base point.

    Only a 2n x 2n series is evaluated: with a = velocity.a, b = velocity.b,

        Y' = Y + lambda [[a/2, I], [b, 0]]
                 phi1([[a/2, I], [a^2/4 - b^T b, a/2]]) [[I], [a/2]].

    The a block must be skew-symmetric for Y' to stay on the manifold.
    Never re-orthonormalizes on its own; with repair=True the result is
    re-orthonormalized only if its defect exceeds the dtype tolerance.
    """
    y = point.matrix
    lam = sec.matrix
    a, b = velocity.a, velocity.b
    n = point.subspace_dim
    dtype = y.dtype

    half_a = 0.5 * a
    eye = np.eye(n, dtype=dtype)
    inner = np.block([[half_a, eye], [half_a @ half_a - b.T @ b, half_a]])
    series = phi1_series(inner)
    right = series @ np.vstack([eye, half_a])  # 2n x n
    left = np.vstack([
        np.hstack([half_a, eye]),
        np.hstack([b, np.zeros((b.shape[0], n), dtype=dtype)]),
    ])  # N x 2n
    update = lam @ (left @ right)
    moved = StiefelPoint(matrix=y + update)

    if repair and moved.orth_defect() > default_orth_tol(dtype):
        moved = reorthonormalize(moved)
    return moved


def reorthonormalize(point: StiefelPoint) -> StiefelPoint:
    """Snap a drifted point back onto the manifold with a QR pass."""
    q, r = householder_qr(point.matrix)
    n = point.subspace_dim
    # Keep column orientation: QR may flip signs relative to the input.
    signs = np.sign(np.diagonal(r)[:n])
    signs[signs == 0] = 1.0
    return StiefelPoint(matrix=np.ascontiguousarray(q[:, :n] * signs))


def random_tangent(point: StiefelPoint, rng: np.random.Generator,
                   scale: float = 1.0) -> TangentVector:
    """A random tangent vector, built by projecting a Gaussian sample."""
    sample = scale * rng.standard_normal(point.matrix.shape).astype(point.dtype)
    return riemannian_gradient(point, sample)
