"""Dense SPD linear algebra for the posterior: Cholesky, solves, Gaussian draws.

Matrices are small (m <= 256), so everything stays dense. Factorization is
delegated to LAPACK through numpy/scipy; this module adds the symmetry
check, the jitter ladder, and the precision-form sampler.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite, NotSymmetric

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
SYMMETRY_RTOL = 1e-10


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular L with L @ L.T == A + jitter * I."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self):
        return self.L.shape[0]

    def reconstruct(self):
        return self.L @ self.L.T


def _as_square(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def cholesky(A):
    """Factor a symmetric positive definite matrix.

    Tries each jitter level in JITTER_LADDER in turn and keeps the first one
    that yields a factor with a strictly positive diagonal.
    """
    A = _as_square(A)
    scale = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise NotSymmetric("matrix is not symmetric within relative tolerance 1e-10")
    # symmetrize so LAPACK sees exactly the averaged matrix
    A = 0.5 * (A + A.T)
    eye = np.eye(A.shape[0])
    for jitter in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(A + jitter * eye if jitter else A)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return CholeskyFactor(L=L, jitter=jitter)
    raise NotPositiveDefinite(
        f"matrix of size {A.shape[0]} is not positive definite even with jitter {JITTER_LADDER[-1]:g}"
    )


def solve_spd(F, b):
    """Solve (L L^T) x = b by two triangular solves. b may be a vector or a matrix."""
    b = np.asarray(b, dtype=np.float64)
    y = solve_triangular(F.L, b, lower=True, check_finite=False)
    return solve_triangular(F.L.T, y, lower=False, check_finite=False)


def sample_mvn(mean, precision_factor, rng, size=None):
    """Draw from N(mean, P^{-1}) where precision_factor factors P = L L^T.

    Solving L^T t = z for z ~ N(0, I) gives Cov(t) = (L L^T)^{-1}. With `size`
    set, returns an array of shape (size, m).
    """
    mean = np.asarray(mean, dtype=np.float64)
    m = precision_factor.dim
    if mean.shape != (m,):
        raise ValueError(f"mean has shape {mean.shape}, factor has dimension {m}")
    if size is None:
        z = rng.standard_normal(m)
        return mean + solve_triangular(precision_factor.L.T, z, lower=False, check_finite=False)
    z = rng.standard_normal((m, size))
    t = solve_triangular(precision_factor.L.T, z, lower=False, check_finite=False)
    return mean[None, :] + t.T
