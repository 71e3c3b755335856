"""Numerics for symmetric and symmetric positive definite (SPD) matrices.

Everything here is eigendecomposition-backed and operates on dense float64
arrays. SPD matrices form a manifold whose tangent space at the identity is
the space of symmetric matrices; ``matrix_log`` maps an SPD matrix onto that
tangent space and ``matrix_exp`` maps back. Determinants of SPD matrices are
evaluated in the log domain throughout the package, so ``log_det`` is the
workhorse.

All functions are pure and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, ValidationError

SYMMETRY_ATOL = 1e-12
DEFAULT_EIG_FLOOR = 1e-6

# exp(710) overflows float64; stay a little under
_EXP_OVERFLOW = 700.0


@dataclass(frozen=True)
class EigDecomp:
    """Eigendecomposition of a symmetric matrix.

    Attributes
    ----------
    eigenvalues : ndarray, shape (n,)
        Eigenvalues in ascending order.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal eigenvectors as columns, aligned with ``eigenvalues``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Return ``V diag(w) V^T``."""
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def as_symmetric(m: np.ndarray, *, atol: float = SYMMETRY_ATOL) -> np.ndarray:
    """Validate that ``m`` is a square symmetric float matrix and return it as float64.

    Raises ``ValidationError`` if the matrix is not square or the asymmetry
    exceeds ``atol`` in any entry. The returned array is exactly symmetric
    (the tiny asymmetry allowed by ``atol`` is averaged away) so downstream
    LAPACK calls see a clean input.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValidationError("matrix dimension must be >= 1")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix contains non-finite entries")
    if np.max(np.abs(a - a.T)) > atol:
        raise ValidationError(f"matrix is not symmetric within {atol}")
    return 0.5 * (a + a.T)


def sym_eig(m: np.ndarray) -> EigDecomp:
    """Eigendecompose a symmetric matrix.

    Parameters
    ----------
    m : ndarray, shape (n, n)
        Symmetric matrix.

    Returns
    -------
    EigDecomp
        Ascending eigenvalues and orthonormal eigenvectors such that
        ``V diag(w) V^T`` reconstructs ``m``.
    """
    a = as_symmetric(m)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        diag = float(np.max(np.abs(a)))
        raise NumericalError(
            f"eigendecomposition failed to converge (dim={a.shape[0]}, max|entry|={diag:.3e})"
        ) from exc
    return EigDecomp(eigenvalues=w, eigenvectors=v)


def matrix_log(s: np.ndarray, *, floor: float | None = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Matrix logarithm of an SPD matrix via its eigendecomposition.

    Returns ``V diag(log w) V^T``, the tangent vector of ``s`` at the
    identity. Eigenvalues are clamped to ``floor`` before taking logs;
    pass ``floor=None`` to disable the repair, in which case a
    non-positive eigenvalue raises ``DomainError``.
    """
    dec = sym_eig(s)
    w = dec.eigenvalues
    if floor is not None:
        w = np.maximum(w, floor)
    elif w[0] <= 0.0:
        raise DomainError(
            f"matrix is not positive definite (min eigenvalue {w[0]:.3e}); see ensure_spd"
        )
    v = dec.eigenvectors
    return _symmetrize((v * np.log(w)) @ v.T)


def matrix_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via its eigendecomposition.

    Returns ``V diag(exp(w)) V^T``, which is SPD for any symmetric input.
    Raises ``NumericalError`` if an eigenvalue would overflow ``exp``.
    """
    dec = sym_eig(a)
    w = dec.eigenvalues
    if w[-1] > _EXP_OVERFLOW:
        raise NumericalError(f"matrix_exp would overflow: max eigenvalue {w[-1]:.3e} > {_EXP_OVERFLOW}")
    v = dec.eigenvectors
    return _symmetrize((v * np.exp(w)) @ v.T)


def log_det(s: np.ndarray, *, floor: float | None = None) -> float:
    """Log-determinant of an SPD matrix.

    Uses a Cholesky factorization (``2 * sum(log(diag(L)))``) and falls back
    to eigenvalues when the factorization fails on a matrix that is SPD only
    up to rounding. With ``floor`` set, eigenvalues in the fallback are
    clamped; without it a genuinely non-PD matrix raises ``DomainError``.
    """
    a = as_symmetric(s)
    try:
        chol = np.linalg.cholesky(a)
        return float(2.0 * np.sum(np.log(np.diagonal(chol))))
    except np.linalg.LinAlgError:
        pass
    w = np.linalg.eigvalsh(a)
    if floor is not None:
        w = np.maximum(w, floor)
    if w[0] <= 0.0:
        raise DomainError(f"log_det of a non-PD matrix (min eigenvalue {w[0]:.3e})")
    return float(np.sum(np.log(w)))


def frobenius_norm(a: np.ndarray) -> float:
    """Frobenius norm, the Euclidean norm on the tangent space."""
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def ensure_spd(m: np.ndarray, floor: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Repair a symmetric matrix to SPD by clamping eigenvalues at ``floor``.

    Idempotent, and a no-op (up to symmetrization) whenever the smallest
    eigenvalue is already at or above ``floor``. Similarity matrices built
    from duplicate items are exactly singular, which is why every kernel in
    this package passes through here before a Cholesky or a matrix log.
    """
    if floor <= 0.0:
        raise ValidationError(f"floor must be > 0, got {floor}")
    a = as_symmetric(m)
    w, v = np.linalg.eigh(a)
    if w[0] >= floor:
        return a
    w = np.maximum(w, floor)
    return _symmetrize((v * w) @ v.T)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)
