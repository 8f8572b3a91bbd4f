"""Variational Bayesian adaptive Kalman filter for multi-sensor fusion with
packet dropouts and corrupted readings, plus two plain Kalman baselines.

Per time step the filter infers the survival rate from the reception counts,
then runs ``n_iters`` mean-field iterations.  Each iteration predicts with the
current expected process precision, scores every received reading as clean
or corrupted (responsibility ``pi``), fuses the readings with gated gains,
and refreshes the Beta posterior of the clean rate and the inverse-Wishart
posteriors of ``R`` and ``Q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .distributions import (
    BetaParams,
    GaussianBelief,
    InverseWishartParams,
    beta_expected_log,
    beta_expected_log_complement,
    beta_mean,
    beta_posterior,
    iw_expected_logdet,
    iw_mean,
    iw_mean_precision,
)
from .errors import ConfigError, FilterError, NotPositiveDefinite
from .numerics import as_matrix, cholesky, logdet_spd, spd_inverse, symmetrize

FUSION_METHODS = ("information", "sequential")


@dataclass(frozen=True)
class VbHyperParams:
    """Priors and iteration settings.

    ``detect_corruption=False`` pins every responsibility to one, i.e. the
    filter assumes all received readings are clean.  ``fusion`` selects how
    the gated per-sensor updates are applied: ``"sequential"`` runs the
    sensor loop literally, ``"information"`` applies the algebraically
    identical batch update in information form (much faster for large N).
    """

    q_prior: InverseWishartParams
    r_prior: InverseWishartParams
    rho_prior: BetaParams
    beta_prior: BetaParams
    e: np.ndarray
    n_iters: int = 20
    detect_corruption: bool = True
    fusion: str = "information"

    def __post_init__(self):
        object.__setattr__(self, "e", as_matrix(self.e, "e"))
        d_y = self.r_prior.dim
        if self.r_prior.dof <= d_y + 1:
            raise ConfigError(f"r_prior.dof must exceed d_y + 1 = {d_y + 1} so that E[R] exists")
        if self.e.shape != (d_y, d_y):
            raise ConfigError(f"e has shape {self.e.shape}, expected {(d_y, d_y)}")
        if self.n_iters < 1:
            raise ConfigError("n_iters must be at least 1")
        if self.fusion not in FUSION_METHODS:
            raise ConfigError(f"fusion must be one of {FUSION_METHODS}, got {self.fusion!r}")


@dataclass(frozen=True)
class IterationState:
    """Quantities carried between the mean-field iterations of one step."""

    eq_inv: np.ndarray
    er_inv: np.ndarray
    r_post: InverseWishartParams
    beta_post: BetaParams
    pi: np.ndarray


@dataclass(frozen=True)
class VbPosterior:
    """Filter output for one time step (the final iteration's values).

    ``pi`` holds one responsibility per sensor; entries of dropped sensors
    are NaN.
    """

    belief: GaussianBelief
    q_post: InverseWishartParams
    r_post: InverseWishartParams
    rho_post: BetaParams
    beta_post: BetaParams
    pi: np.ndarray
    eq_inv: np.ndarray
    er_inv: np.ndarray
    cross_term_fallbacks: int = 0

    @property
    def dropout_rate_est(self) -> float:
        """``E[1 - rho]``."""
        return 1.0 - beta_mean(self.rho_post)

    @property
    def corruption_rate_est(self) -> float:
        """``E[1 - beta]``."""
        return 1.0 - beta_mean(self.beta_post)


# --- single-step building blocks -----------------------------------------------------

def predict(prev: GaussianBelief, f: np.ndarray, eq_inv: np.ndarray) -> GaussianBelief:
    """Time update using the inverse of the expected process precision as ``Q``."""
    return predict_with_cov(prev, f, spd_inverse(eq_inv))


def predict_with_cov(prev: GaussianBelief, f: np.ndarray, q: np.ndarray) -> GaussianBelief:
    return GaussianBelief(f @ prev.mean, symmetrize(f @ prev.cov @ f.T + q))


def _log_evidence(ys, pred: GaussianBelief, h, precision, logdet_term, log_prior):
    ys = np.asarray(ys, dtype=float)
    resid = ys - h @ pred.mean
    quad = np.einsum("...i,ij,...j->...", resid, precision, resid)
    trace = float(np.sum(precision * (h @ pred.cov @ h.T)))
    out = log_prior - 0.5 * logdet_term - 0.5 * quad - 0.5 * trace
    return float(out) if np.ndim(out) == 0 else out


def delta_clean(y, pred: GaussianBelief, h: np.ndarray, er_inv: np.ndarray, e_logdet_r: float,
                e_log_beta: float):
    """Expected log-weight of the clean branch, up to a shared constant.

    ``E[ln beta] - 1/2 E[ln|R|] - 1/2 r' E[R^-1] r - 1/2 tr(E[R^-1] H P H')``
    with ``r = y - H xhat`` at the predictive belief.  ``y`` may be a single
    reading ``(d_y,)`` or a stack ``(M, d_y)``; the result matches.
    """
    return _log_evidence(y, pred, h, er_inv, e_logdet_r, e_log_beta)


def delta_corrupt(y, pred: GaussianBelief, h: np.ndarray, r_mean_plus_e_inv: np.ndarray,
                  logdet_r_plus_e: float, e_log_1mbeta: float):
    """Corrupted-branch counterpart of :func:`delta_clean`, with ``(E[R] + E)`` plugged in."""
    return _log_evidence(y, pred, h, r_mean_plus_e_inv, logdet_r_plus_e, e_log_1mbeta)


def responsibility(d1, d0):
    """Probability of the clean branch: softmax of the two log-weights."""
    d1 = np.asarray(d1, dtype=float)
    d0 = np.asarray(d0, dtype=float)
    m = np.maximum(d1, d0)
    e1 = np.exp(d1 - m)
    e0 = np.exp(d0 - m)
    out = e1 / (e1 + e0)
    return float(out) if out.ndim == 0 else out


def effective_precision(pi, er_inv: np.ndarray, r_plus_e_inv: np.ndarray) -> np.ndarray:
    """``pi E[R^-1] + (1 - pi) (E[R] + E)^-1``; vectorizes over an array of ``pi``."""
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 0:
        if pi == 1.0:
            return er_inv.copy()
        if pi == 0.0:
            return r_plus_e_inv.copy()
        return symmetrize(pi * er_inv + (1.0 - pi) * r_plus_e_inv)
    omega = pi[:, None, None] * er_inv + (1.0 - pi)[:, None, None] * r_plus_e_inv
    return 0.5 * (omega + np.swapaxes(omega, 1, 2))


def gated_update(inter: GaussianBelief, y, gamma: bool, omega: np.ndarray, h: np.ndarray) -> GaussianBelief:
    """One sensor's measurement update with gain ``gamma P H' (omega^-1 + H P H')^-1``.

    A dropped packet (``gamma`` false) gives a zero gain and returns ``inter``
    itself.
    """
    if not gamma:
        return inter
    if y is None:
        raise ValueError("a received reading (gamma = 1) must be present")
    ph = inter.cov @ h.T
    s = symmetrize(spd_inverse(omega) + h @ ph)
    gain = ph @ spd_inverse(s)
    mean = inter.mean + gain @ (np.asarray(y, dtype=float) - h @ inter.mean)
    cov = symmetrize((np.eye(inter.dim) - gain @ h) @ inter.cov)
    return GaussianBelief(mean, cov)


def fuse_sequential(pred: GaussianBelief, ys, gammas, omegas, h: np.ndarray) -> GaussianBelief:
    """Apply :func:`gated_update` for sensors ``0..N-1`` in index order."""
    belief = pred
    for y, g, om in zip(ys, gammas, omegas):
        belief = gated_update(belief, y if g else None, bool(g), om, h)
    return belief


def fuse_information(pred: GaussianBelief, ys, gammas, omegas, h: np.ndarray) -> GaussianBelief:
    """Batch form of :func:`fuse_sequential`.

    With the per-sensor precisions fixed in advance, the sequential gated
    updates compose to ``P^-1 = P_pred^-1 + sum_i gamma_i H' omega_i H`` and
    ``x = x_pred + P sum_i gamma_i H' omega_i (y_i - H x_pred)``.
    """
    gammas = np.asarray(gammas, dtype=bool)
    if not gammas.any():
        return pred
    ys = np.asarray(ys, dtype=float)[gammas]
    omegas = np.asarray(omegas, dtype=float)[gammas]
    resid = ys - h @ pred.mean
    info = spd_inverse(pred.cov) + h.T @ omegas.sum(axis=0) @ h
    cov = spd_inverse(info)
    mean = pred.mean + cov @ (h.T @ np.einsum("mij,mj->i", omegas, resid))
    return GaussianBelief(mean, cov)


_FUSERS = {"information": fuse_information, "sequential": fuse_sequential}


def update_rho(prior: BetaParams, received_count: int, n_sensors: int) -> BetaParams:
    if not 0 <= received_count <= n_sensors:
        raise ValueError(f"received count {received_count} outside [0, {n_sensors}]")
    return beta_posterior(prior, received_count, n_sensors - received_count)


def update_beta(prior: BetaParams, gamma, pi) -> BetaParams:
    """Soft-count update of the clean rate from the received sensors only."""
    gamma = np.asarray(gamma, dtype=bool)
    pi = np.asarray(pi, dtype=float)
    if gamma.shape != pi.shape:
        raise ValueError("gamma and pi must have the same length")
    p = pi[gamma]
    return beta_posterior(prior, float(p.sum()), float((1.0 - p).sum()))


def update_r(prior: InverseWishartParams, post_belief: GaussianBelief, ys, gammas, pis,
             h: np.ndarray) -> InverseWishartParams:
    """Responsibility-weighted inverse-Wishart update of the observation covariance."""
    gammas = np.asarray(gammas, dtype=bool)
    w = np.asarray(pis, dtype=float)[gammas]
    if w.size == 0:
        return prior
    resid = np.asarray(ys, dtype=float)[gammas] - h @ post_belief.mean
    hph = h @ post_belief.cov @ h.T
    total = float(w.sum())
    scatter = np.einsum("m,mi,mj->ij", w, resid, resid) + total * hph
    return InverseWishartParams(prior.dof + total, symmetrize(prior.scale + scatter))


def update_q(prior: InverseWishartParams, post_belief: GaussianBelief, prev_belief: GaussianBelief,
             pred_cov: np.ndarray, f: np.ndarray, *, cross_term: bool = True) -> InverseWishartParams:
    """Inverse-Wishart update of the process covariance from one transition.

    The lag-one cross covariance is ``P_k P_pred^-1 F P_{k-1}``.  With
    ``cross_term=False`` the cross-covariance correction is left out.
    Raises :class:`NotPositiveDefinite` if the new scale is not SPD.
    """
    d = post_belief.mean - f @ prev_belief.mean
    fpf = f @ prev_belief.cov @ f.T
    scale = prior.scale + np.outer(d, d) + post_belief.cov + fpf
    if cross_term:
        cross = post_belief.cov @ spd_inverse(pred_cov) @ f @ prev_belief.cov
        scale = scale - (f @ cross.T + cross @ f.T)
    scale = symmetrize(scale)
    cholesky(scale)
    return InverseWishartParams(prior.dof + 1.0, scale)


# --- full step and trajectory ---------------------------------------------------------

def vb_step(prev: GaussianBelief | VbPosterior, ys, gammas, hyper: VbHyperParams, f: np.ndarray,
            h: np.ndarray, *, frozen_precisions: tuple[np.ndarray, np.ndarray] | None = None,
            k: int | None = None) -> VbPosterior:
    """One time step of the VB filter.

    ``ys`` is ``(N, d_y)`` (rows of dropped sensors are ignored, NaN is fine)
    and ``gammas`` the ``(N,)`` reception mask.  ``frozen_precisions``
    ``(E[Q^-1], E[R^-1])`` switches to the degenerate oracle mode: every
    responsibility is one and the expected precisions never change.
    """
    prev_belief = prev.belief if isinstance(prev, VbPosterior) else prev
    gammas = np.asarray(gammas, dtype=bool)
    ys = np.asarray(ys, dtype=float)
    n = gammas.size
    received = int(gammas.sum())
    fuse = _FUSERS[hyper.fusion]
    rho_post = update_rho(hyper.rho_prior, received, n)

    if frozen_precisions is not None:
        eq_inv, er_inv = (as_matrix(m) for m in frozen_precisions)
    else:
        eq_inv = iw_mean_precision(hyper.q_prior)
        er_inv = iw_mean_precision(hyper.r_prior)
    force_clean = frozen_precisions is not None or not hyper.detect_corruption
    state = IterationState(eq_inv, er_inv, hyper.r_prior, hyper.beta_prior, np.full(n, np.nan))
    q_post = hyper.q_prior
    fallbacks = 0
    y_recv = ys[gammas]

    for j in range(hyper.n_iters):
        try:
            pred = predict(prev_belief, f, state.eq_inv)
            pi = np.full(n, np.nan)
            if force_clean:
                pi[gammas] = 1.0
                omegas = np.broadcast_to(state.er_inv, (n,) + state.er_inv.shape)
            else:
                r_bar_e = iw_mean(state.r_post) + hyper.e
                re_inv = spd_inverse(r_bar_e)
                d1 = delta_clean(y_recv, pred, h, state.er_inv, iw_expected_logdet(state.r_post),
                                 beta_expected_log(state.beta_post))
                d0 = delta_corrupt(y_recv, pred, h, re_inv, logdet_spd(r_bar_e),
                                   beta_expected_log_complement(state.beta_post))
                pi[gammas] = responsibility(d1, d0)
                omegas = np.empty((n,) + state.er_inv.shape)
                omegas[gammas] = effective_precision(pi[gammas], state.er_inv, re_inv)
                omegas[~gammas] = state.er_inv
            post = fuse(pred, ys, gammas, omegas, h)

            beta_post = update_beta(hyper.beta_prior, gammas, np.where(gammas, pi, 0.0))
            r_post = update_r(hyper.r_prior, post, ys, gammas, np.where(gammas, pi, 0.0), h)
            try:
                q_post = update_q(hyper.q_prior, post, prev_belief, pred.cov, f)
            except NotPositiveDefinite:
                q_post = update_q(hyper.q_prior, post, prev_belief, pred.cov, f, cross_term=False)
                fallbacks += 1
            if frozen_precisions is not None:
                new_eq, new_er = state.eq_inv, state.er_inv
            else:
                new_eq, new_er = iw_mean_precision(q_post), iw_mean_precision(r_post)
        except NotPositiveDefinite as exc:
            raise FilterError(f"numerical failure: {exc}", k=k, iteration=j + 1) from exc
        state = IterationState(new_eq, new_er, r_post, beta_post, pi)

    return VbPosterior(post, q_post, state.r_post, rho_post, state.beta_post, state.pi,
                       state.eq_inv, state.er_inv, fallbacks)


def _check_dims(dataset, f, h, d_x):
    cfg = dataset.config
    if f.shape != (d_x, d_x) or h.shape != (cfg.d_y, d_x):
        raise ConfigError("filter dimensions do not match the dataset")


def _check_hyper(dataset, hyper):
    cfg = dataset.config
    if hyper.r_prior.dim != cfg.d_y or hyper.q_prior.dim != cfg.d_x:
        raise ConfigError("hyper-parameter dimensions do not match the dataset")


def run_filter(dataset, hyper: VbHyperParams, x0: GaussianBelief, *,
               frozen_precisions: Callable[[int], tuple[np.ndarray, np.ndarray]] | None = None,
               engine: str = "compiled") -> list[VbPosterior]:
    """Run the VB filter over the whole horizon.

    Priors re-anchor at ``hyper`` every step; only the state belief threads
    through time.  ``frozen_precisions``, if given, maps ``k`` to the
    ``(E[Q^-1], E[R^-1])`` pair used in degenerate oracle mode.

    ``engine="reference"`` chains :func:`vb_step` calls; ``"compiled"`` runs
    the same arithmetic in one jitted loop and is what experiments use.
    """
    cfg = dataset.config
    f, h = cfg.f, cfg.h
    _check_dims(dataset, f, h, x0.dim)
    _check_hyper(dataset, hyper)
    if engine == "compiled":
        return vb_trace(dataset, hyper, x0, frozen_precisions=frozen_precisions).posteriors()
    if engine != "reference":
        raise ValueError(f"unknown engine {engine!r}")
    out = []
    belief: GaussianBelief | VbPosterior = x0
    for k in range(cfg.horizon):
        frozen = frozen_precisions(k) if frozen_precisions is not None else None
        belief = vb_step(belief, dataset.y[:, k], dataset.gamma[:, k], hyper, f, h,
                         frozen_precisions=frozen, k=k)
        out.append(belief)
    return out


@dataclass(frozen=True)
class VbTrace:
    """Whole-run filter output as stacked arrays, indexed by k first.

    This is what the compiled engine produces; :meth:`posteriors` expands it
    into per-step :class:`VbPosterior` objects.
    """

    means: np.ndarray
    covs: np.ndarray
    q_dof: np.ndarray
    q_scale: np.ndarray
    r_dof: np.ndarray
    r_scale: np.ndarray
    rho_ab: np.ndarray
    beta_ab: np.ndarray
    pis: np.ndarray
    eq_inv: np.ndarray
    er_inv: np.ndarray
    fallbacks: np.ndarray

    @property
    def dropout_rate_est(self) -> np.ndarray:
        return self.rho_ab[:, 1] / self.rho_ab.sum(axis=1)

    @property
    def corruption_rate_est(self) -> np.ndarray:
        return self.beta_ab[:, 1] / self.beta_ab.sum(axis=1)

    def q_mean(self) -> np.ndarray:
        """Posterior mean of ``Q`` per step; NaN where it does not exist."""
        return _iw_means(self.q_dof, self.q_scale)

    def r_mean(self) -> np.ndarray:
        return _iw_means(self.r_dof, self.r_scale)

    def posteriors(self) -> list[VbPosterior]:
        return [
            VbPosterior(
                belief=GaussianBelief(self.means[k], self.covs[k]),
                q_post=InverseWishartParams(self.q_dof[k], self.q_scale[k]),
                r_post=InverseWishartParams(self.r_dof[k], self.r_scale[k]),
                rho_post=BetaParams(self.rho_ab[k, 0], self.rho_ab[k, 1]),
                beta_post=BetaParams(self.beta_ab[k, 0], self.beta_ab[k, 1]),
                pi=self.pis[k], eq_inv=self.eq_inv[k], er_inv=self.er_inv[k],
                cross_term_fallbacks=int(self.fallbacks[k]),
            )
            for k in range(len(self.means))
        ]


def _iw_means(dof: np.ndarray, scale: np.ndarray) -> np.ndarray:
    denom = dof - scale.shape[-1] - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = scale / denom[:, None, None]
    out[denom <= 0] = np.nan
    return out


def vb_trace(dataset, hyper: VbHyperParams, x0: GaussianBelief, *,
             frozen_precisions: Callable[[int], tuple[np.ndarray, np.ndarray]] | None = None) -> VbTrace:
    """Compiled run of the VB filter returning raw arrays (see :func:`run_filter`)."""
    from . import _kernel

    cfg = dataset.config
    _check_dims(dataset, cfg.f, cfg.h, x0.dim)
    _check_hyper(dataset, hyper)
    t = cfg.horizon
    if frozen_precisions is not None:
        pairs = [frozen_precisions(k) for k in range(t)]
        frozen_eq = np.ascontiguousarray([as_matrix(p[0]) for p in pairs])
        frozen_er = np.ascontiguousarray([as_matrix(p[1]) for p in pairs])
    else:
        frozen_eq = np.zeros((t, cfg.d_x, cfg.d_x))
        frozen_er = np.zeros((t, cfg.d_y, cfg.d_y))
    y = np.ascontiguousarray(np.nan_to_num(dataset.y, nan=0.0))
    out = _kernel.run_vb(
        y, np.ascontiguousarray(dataset.gamma), np.ascontiguousarray(cfg.f), np.ascontiguousarray(cfg.h),
        np.ascontiguousarray(hyper.e), np.ascontiguousarray(x0.mean), np.ascontiguousarray(x0.cov),
        float(hyper.q_prior.dof), np.ascontiguousarray(hyper.q_prior.scale),
        float(hyper.r_prior.dof), np.ascontiguousarray(hyper.r_prior.scale),
        float(hyper.rho_prior.a), float(hyper.rho_prior.b), float(hyper.beta_prior.a), float(hyper.beta_prior.b),
        int(hyper.n_iters), bool(hyper.detect_corruption), hyper.fusion == "sequential",
        frozen_precisions is not None, frozen_eq, frozen_er)
    status = out[-1]
    if status[0] != _kernel.OK:
        raise FilterError("numerical failure: matrix is not positive definite",
                          k=int(status[1]), iteration=int(status[2]))
    return VbTrace(*out[:-1])


def kalman_filter(dataset, q_at: Callable[[int], np.ndarray], r_at: Callable[[int], np.ndarray],
                  x0: GaussianBelief, *, fusion: str = "information") -> list[GaussianBelief]:
    """Multi-sensor Kalman filter with known covariances, treating every received reading as clean."""
    cfg = dataset.config
    f, h = cfg.f, cfg.h
    _check_dims(dataset, f, h, x0.dim)
    fuse = _FUSERS[fusion]
    out = []
    belief = x0
    n = cfg.n_sensors
    for k in range(cfg.horizon):
        try:
            pred = predict_with_cov(belief, f, q_at(k))
            omega = spd_inverse(r_at(k))
            belief = fuse(pred, dataset.y[:, k], dataset.gamma[:, k],
                          np.broadcast_to(omega, (n,) + omega.shape), h)
        except NotPositiveDefinite as exc:
            raise FilterError(f"numerical failure: {exc}", k=k) from exc
        out.append(belief)
    return out


def kalman_oracle(dataset, q_true_schedule: Sequence[np.ndarray], r_true_schedule: Sequence[np.ndarray],
                  x0: GaussianBelief, *, fusion: str = "information") -> list[GaussianBelief]:
    """Kalman filter that knows the true ``Q_k`` and ``R_k`` at every step."""
    return kalman_filter(dataset, lambda k: q_true_schedule[k], lambda k: r_true_schedule[k], x0, fusion=fusion)


def kalman_static(dataset, q_nominal: np.ndarray, r_nominal: np.ndarray, x0: GaussianBelief, *,
                  fusion: str = "information") -> list[GaussianBelief]:
    """Kalman filter with fixed nominal covariances for the whole horizon."""
    q_nominal = as_matrix(q_nominal)
    r_nominal = as_matrix(r_nominal)
    return kalman_filter(dataset, lambda k: q_nominal, lambda k: r_nominal, x0, fusion=fusion)


def default_hyper(d_x: int, d_y: int, e, *, n_iters: int = 20, q_scale: float = 0.05,
                  r_scale: float = 1.0, detect_corruption: bool = True,
                  fusion: str = "information") -> VbHyperParams:
    """Weakly informative priors, matched on precision.

    ``nu0 = d_x + 2`` and ``u0 = d_y + 3`` with scales chosen so that the
    plug-in precisions the VI loop starts from are ``(q_scale I)^-1`` and
    ``(r_scale I)^-1``.  The priors are re-applied every step and each step
    sees a single transition, so ``nu0`` stays as low as the mean allows.
    Both Beta priors are uniform.
    """
    u0 = d_y + 3.0
    nu0 = d_x + 2.0
    return VbHyperParams(
        q_prior=InverseWishartParams(nu0, nu0 * q_scale * np.eye(d_x)),
        r_prior=InverseWishartParams(u0, u0 * r_scale * np.eye(d_y)),
        rho_prior=BetaParams(1.0, 1.0),
        beta_prior=BetaParams(1.0, 1.0),
        e=e,
        n_iters=n_iters,
        detect_corruption=detect_corruption,
        fusion=fusion,
    )
