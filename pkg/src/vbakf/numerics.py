"""Small dense linear-algebra kernel and the special functions the conjugate updates need.

Matrices and vectors are plain float64 numpy arrays. Problem sizes are tiny
(state and observation dimensions of a handful), so everything is dense.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NotPositiveDefinite

_SYM_RTOL = 1e-10
_JITTER = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-d float array (scalars become 1x1)."""
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce ``v`` to a finite 1-d float array (scalars become length 1)."""
    x = np.array(v, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} has non-finite entries")
    return x


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return ``(a + a.T) / 2``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"symmetrize needs a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    A failed factorization is retried once on
    ``a * (1 + 1e-12) + 1e-12 * trace(a) / dim * I`` so that round-off at the
    boundary of the SPD cone is tolerated while genuinely indefinite input
    still raises :class:`NotPositiveDefinite`.
    """
    a = np.asarray(a, dtype=float)
    if a.shape == (1, 1):
        v = float(a[0, 0])
        if v > 0.0 and math.isfinite(v):
            return np.array([[math.sqrt(v)]])
        raise NotPositiveDefinite(f"1x1 matrix {v} is not positive definite")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T)) > _SYM_RTOL * max(scale, 1e-300):
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    n = a.shape[0]
    jittered = a * (1.0 + _JITTER) + (_JITTER * np.trace(a) / n) * np.eye(n)
    try:
        return np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("matrix is not positive definite") from None


def is_spd(a: np.ndarray) -> bool:
    try:
        cholesky(a)
    except NotPositiveDefinite:
        return False
    return True


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor, symmetrized."""
    if np.shape(a) == (1, 1):
        return 1.0 / cholesky(a) ** 2
    l_inv = np.linalg.inv(cholesky(a))
    return symmetrize(l_inv.T @ l_inv)


def logdet_spd(a: np.ndarray) -> float:
    """``ln det a`` as ``sum(2 ln L_ii)``."""
    if np.shape(a) == (1, 1):
        return 2.0 * math.log(cholesky(a)[0, 0])
    return float(2.0 * np.sum(np.log(np.diag(cholesky(a)))))


# Asymptotic coefficients of psi(x) - ln(x) + 1/(2x) in powers of 1/x^2.
_PSI_SERIES = (
    -1.0 / 12.0,
    1.0 / 120.0,
    -1.0 / 252.0,
    1.0 / 240.0,
    -1.0 / 132.0,
    691.0 / 32760.0,
)


def digamma(x: float) -> float:
    """Digamma function for positive real ``x``.

    Shifts the argument up to ``x >= 6`` with ``psi(x) = psi(x + 1) - 1/x``
    and then evaluates the asymptotic series.
    """
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"digamma is defined here only for finite x > 0, got {x}")
    shift = 0.0
    while x < 6.0:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    for c in reversed(_PSI_SERIES):
        series = series * inv2 + c
    return shift + math.log(x) - 0.5 / x + series * inv2
