"""Conjugate-family containers and the posterior expectations used by the VB updates.

Inverse-Wishart convention: ``R ~ IW(dof, scale)`` means ``R^{-1}`` is Wishart
with ``dof`` degrees of freedom and scale matrix ``scale^{-1}``.  Hence
``E[R^{-1}] = dof * scale^{-1}`` and ``E[R] = scale / (dof - d - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MeanUndefined
from .numerics import as_matrix, as_vector, cholesky, digamma, logdet_spd, spd_inverse


@dataclass(frozen=True)
class InverseWishartParams:
    dof: float
    scale: np.ndarray

    def __post_init__(self):
        scale = as_matrix(self.scale, "inverse-Wishart scale")
        if scale.shape[0] != scale.shape[1]:
            raise ValueError(f"inverse-Wishart scale must be square, got {scale.shape}")
        dof = float(self.dof)
        if not math.isfinite(dof) or dof <= scale.shape[0] - 1:
            raise DomainError(f"inverse-Wishart dof must exceed dim - 1 = {scale.shape[0] - 1}, got {dof}")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", dof)

    @property
    def dim(self) -> int:
        return self.scale.shape[0]


@dataclass(frozen=True)
class BetaParams:
    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
            raise DomainError(f"Beta parameters must be positive and finite, got ({a}, {b})")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian state belief."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "belief mean")
        cov = as_matrix(self.cov, "belief covariance")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def iw_mean(p: InverseWishartParams) -> np.ndarray:
    denom = p.dof - p.dim - 1
    if denom <= 0:
        raise MeanUndefined(f"inverse-Wishart mean needs dof > {p.dim + 1}, got {p.dof}")
    return p.scale / denom


def iw_mean_precision(p: InverseWishartParams) -> np.ndarray:
    """``E[R^{-1}] = dof * scale^{-1}``."""
    return p.dof * spd_inverse(p.scale)


def iw_expected_logdet(p: InverseWishartParams) -> float:
    """``E[ln |R|]`` from the Wishart log-determinant identity."""
    d = p.dim
    return (logdet_spd(p.scale) - d * math.log(2.0)
            - sum(digamma((p.dof + 1 - j) / 2.0) for j in range(1, d + 1)))


def beta_mean(p: BetaParams) -> float:
    return p.a / (p.a + p.b)


def beta_expected_log(p: BetaParams) -> float:
    """``E[ln beta] = psi(a) - psi(a + b)``."""
    return digamma(p.a) - digamma(p.a + p.b)


def beta_expected_log_complement(p: BetaParams) -> float:
    """``E[ln(1 - beta)] = psi(b) - psi(a + b)``."""
    return digamma(p.b) - digamma(p.a + p.b)


def beta_posterior(prior: BetaParams, successes: float, failures: float) -> BetaParams:
    """Conjugate Beta update; soft (fractional) counts are allowed."""
    if successes < 0 or failures < 0:
        raise DomainError(f"Beta evidence counts must be nonnegative, got ({successes}, {failures})")
    return BetaParams(prior.a + successes, prior.b + failures)


def gaussian_sample(belief: GaussianBelief, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``mean + L z`` with ``L = cholesky(cov)`` and standard normal ``z``.

    With ``size`` given, returns an array of shape ``(size, dim)``.
    """
    chol = cholesky(belief.cov)
    if size is None:
        return belief.mean + chol @ rng.standard_normal(belief.dim)
    return belief.mean + rng.standard_normal((size, belief.dim)) @ chol.T
