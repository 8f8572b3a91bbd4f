"""Compiled whole-trajectory VB filter loop.

Mirrors :func:`vbakf.filtering.vb_step` operation for operation so that a
full run costs one call instead of thousands of small numpy calls.  The
pure-Python step remains the reference; tests hold the two together.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
NOT_SPD = 1

_JITTER = 1e-12
_LN2 = math.log(2.0)


@njit(cache=True)
def _chol_raw(a):
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for m in range(j):
            s -= low[j, m] * low[j, m]
        if not s > 0.0 or not np.isfinite(s):
            return low, False
        low[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for m in range(j):
                t -= low[i, m] * low[j, m]
            low[i, j] = t / low[j, j]
    return low, True


@njit(cache=True)
def _chol(a):
    low, ok = _chol_raw(a)
    if ok:
        return low, True
    n = a.shape[0]
    return _chol_raw(a * (1.0 + _JITTER) + (_JITTER * np.trace(a) / n) * np.eye(n))


@njit(cache=True)
def _sym(a):
    return 0.5 * (a + a.T)


@njit(cache=True)
def _spd_inv(a):
    low, ok = _chol(a)
    n = a.shape[0]
    if not ok:
        return np.zeros((n, n)), False
    inv_low = np.zeros((n, n))
    for c in range(n):
        for i in range(c, n):
            t = 1.0 if i == c else 0.0
            for m in range(c, i):
                t -= low[i, m] * inv_low[m, c]
            inv_low[i, c] = t / low[i, i]
    return _sym(inv_low.T @ inv_low), True


@njit(cache=True)
def _logdet(a):
    low, ok = _chol(a)
    s = 0.0
    for i in range(a.shape[0]):
        s += 2.0 * math.log(low[i, i]) if ok else 0.0
    return s, ok


@njit(cache=True)
def _quad(r, a):
    s = 0.0
    for i in range(r.size):
        for j in range(r.size):
            s += r[i] * a[i, j] * r[j]
    return s


@njit(cache=True)
def _digamma(x):
    shift = 0.0
    while x < 6.0:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 691.0 / 32760.0
    series = series * inv2 - 1.0 / 132.0
    series = series * inv2 + 1.0 / 240.0
    series = series * inv2 - 1.0 / 252.0
    series = series * inv2 + 1.0 / 120.0
    series = series * inv2 - 1.0 / 12.0
    return shift + math.log(x) - 0.5 / x + series * inv2


@njit(cache=True)
def run_vb(y, gamma, f, h, e, x0_mean, x0_cov, nu0, v0, u0, u0_scale, a_rho, b_rho, a_beta, b_beta,
           n_iters, detect, sequential, use_frozen, frozen_eq, frozen_er):
    n, t_len, d_y = y.shape
    d_x = f.shape[0]
    means = np.zeros((t_len, d_x))
    covs = np.zeros((t_len, d_x, d_x))
    q_dof = np.zeros(t_len)
    q_scale = np.zeros((t_len, d_x, d_x))
    r_dof = np.zeros(t_len)
    r_scale = np.zeros((t_len, d_y, d_y))
    rho_ab = np.zeros((t_len, 2))
    beta_ab = np.zeros((t_len, 2))
    pis = np.full((t_len, n), np.nan)
    eq_out = np.zeros((t_len, d_x, d_x))
    er_out = np.zeros((t_len, d_y, d_y))
    fallbacks = np.zeros(t_len, dtype=np.int64)
    status = np.zeros(3, dtype=np.int64)

    force_clean = use_frozen or not detect
    rbuf = np.zeros(d_y)
    x_prev = x0_mean.copy()
    p_prev = x0_cov.copy()
    eye_x = np.eye(d_x)
    v0_inv, ok_a = _spd_inv(v0)
    u0_inv, ok_b = _spd_inv(u0_scale)
    if not (ok_a and ok_b):
        status[0] = NOT_SPD
        return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status

    for k in range(t_len):
        received = 0
        for i in range(n):
            if gamma[i, k]:
                received += 1
        rho_ab[k, 0] = a_rho + received
        rho_ab[k, 1] = b_rho + (n - received)

        if use_frozen:
            eq_inv = frozen_eq[k].copy()
            er_inv = frozen_er[k].copy()
        else:
            eq_inv = nu0 * v0_inv
            er_inv = u0 * u0_inv
        cur_r_dof = u0
        cur_r_scale = u0_scale.copy()
        cur_b_a = a_beta
        cur_b_b = b_beta
        pi = np.full(n, np.nan)
        x = x_prev.copy()
        p = p_prev.copy()
        cur_q_scale = v0.copy()
        nfall = 0

        for j in range(n_iters):
            q_pred, ok = _spd_inv(eq_inv)
            if not ok:
                status[0] = NOT_SPD
                status[1] = k
                status[2] = j + 1
                return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status
            xp = f @ x_prev
            pp = _sym(f @ p_prev @ f.T + q_pred)

            new_pi = np.full(n, np.nan)
            re_inv = er_inv
            if force_clean:
                for i in range(n):
                    if gamma[i, k]:
                        new_pi[i] = 1.0
            else:
                rbe = cur_r_scale / (cur_r_dof - d_y - 1) + e
                re_inv, ok1 = _spd_inv(rbe)
                ld_re, ok2 = _logdet(rbe)
                ld_r, ok3 = _logdet(cur_r_scale)
                if not (ok1 and ok2 and ok3):
                    status[0] = NOT_SPD
                    status[1] = k
                    status[2] = j + 1
                    return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status
                e_ld_r = ld_r - d_y * _LN2
                for jj in range(1, d_y + 1):
                    e_ld_r -= _digamma((cur_r_dof + 1.0 - jj) / 2.0)
                dsum = _digamma(cur_b_a + cur_b_b)
                e_lb = _digamma(cur_b_a) - dsum
                e_l1b = _digamma(cur_b_b) - dsum
                hph = h @ pp @ h.T
                tr1 = np.sum(er_inv * hph)
                tr0 = np.sum(re_inv * hph)
                hx = h @ xp
                for i in range(n):
                    if not gamma[i, k]:
                        continue
                    for a in range(d_y):
                        rbuf[a] = y[i, k, a] - hx[a]
                    q1 = _quad(rbuf, er_inv)
                    q0 = _quad(rbuf, re_inv)
                    d1 = e_lb - 0.5 * e_ld_r - 0.5 * q1 - 0.5 * tr1
                    d0 = e_l1b - 0.5 * ld_re - 0.5 * q0 - 0.5 * tr0
                    m = max(d1, d0)
                    w1 = math.exp(d1 - m)
                    w0 = math.exp(d0 - m)
                    new_pi[i] = w1 / (w1 + w0)

            if sequential:
                x = xp.copy()
                p = pp.copy()
                for i in range(n):
                    if not gamma[i, k]:
                        continue
                    pim = new_pi[i]
                    if pim == 1.0:
                        om = er_inv.copy()
                    elif pim == 0.0:
                        om = re_inv.copy()
                    else:
                        om = _sym(pim * er_inv + (1.0 - pim) * re_inv)
                    om_inv, ok1 = _spd_inv(om)
                    ph = p @ h.T
                    s_inv, ok2 = _spd_inv(_sym(om_inv + h @ ph))
                    if not (ok1 and ok2):
                        status[0] = NOT_SPD
                        status[1] = k
                        status[2] = j + 1
                        return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status
                    gain = ph @ s_inv
                    x = x + gain @ (y[i, k] - h @ x)
                    p = _sym((eye_x - gain @ h) @ p)
            elif received > 0:
                om_sum = np.zeros((d_y, d_y))
                om_r = np.zeros(d_y)
                hx = h @ xp
                for i in range(n):
                    if not gamma[i, k]:
                        continue
                    pim = new_pi[i]
                    for a in range(d_y):
                        rbuf[a] = y[i, k, a] - hx[a]
                    for a in range(d_y):
                        for b in range(d_y):
                            om_ab = 0.5 * ((pim * er_inv[a, b] + (1.0 - pim) * re_inv[a, b])
                                           + (pim * er_inv[b, a] + (1.0 - pim) * re_inv[b, a]))
                            om_sum[a, b] += om_ab
                            om_r[a] += om_ab * rbuf[b]
                pp_inv, ok1 = _spd_inv(pp)
                p, ok2 = _spd_inv(pp_inv + h.T @ om_sum @ h)
                if not (ok1 and ok2):
                    status[0] = NOT_SPD
                    status[1] = k
                    status[2] = j + 1
                    return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status
                x = xp + p @ (h.T @ om_r)
            else:
                x = xp.copy()
                p = pp.copy()

            # clean-rate, R and Q posteriors
            s_pi = 0.0
            s_1mpi = 0.0
            scatter = np.zeros((d_y, d_y))
            hx = h @ x
            for i in range(n):
                if not gamma[i, k]:
                    continue
                w = new_pi[i]
                s_pi += w
                s_1mpi += 1.0 - w
                for a in range(d_y):
                    rbuf[a] = y[i, k, a] - hx[a]
                for a in range(d_y):
                    for b in range(d_y):
                        scatter[a, b] += w * rbuf[a] * rbuf[b]
            cur_b_a = a_beta + s_pi
            cur_b_b = b_beta + s_1mpi
            if received > 0:
                cur_r_dof = u0 + s_pi
                cur_r_scale = _sym(u0_scale + (scatter + s_pi * (h @ p @ h.T)))
            else:
                cur_r_dof = u0
                cur_r_scale = u0_scale.copy()

            dvec = x - f @ x_prev
            base = v0 + np.outer(dvec, dvec) + p + f @ p_prev @ f.T
            pp_inv, ok = _spd_inv(pp)
            if ok:
                cross = p @ pp_inv @ f @ p_prev
                cand = _sym(base - (f @ cross.T + cross @ f.T))
                _, ok = _chol(cand)
            if ok:
                cur_q_scale = cand
            else:
                cur_q_scale = _sym(base)
                nfall += 1

            if not use_frozen:
                qi, ok1 = _spd_inv(cur_q_scale)
                ri, ok2 = _spd_inv(cur_r_scale)
                if not (ok1 and ok2):
                    status[0] = NOT_SPD
                    status[1] = k
                    status[2] = j + 1
                    return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status
                eq_inv = (nu0 + 1.0) * qi
                er_inv = cur_r_dof * ri
            pi = new_pi

        means[k] = x
        covs[k] = p
        q_dof[k] = nu0 + 1.0
        q_scale[k] = cur_q_scale
        r_dof[k] = cur_r_dof
        r_scale[k] = cur_r_scale
        beta_ab[k, 0] = cur_b_a
        beta_ab[k, 1] = cur_b_b
        pis[k] = pi
        eq_out[k] = eq_inv
        er_out[k] = er_inv
        fallbacks[k] = nfall
        x_prev = x
        p_prev = p

    return means, covs, q_dof, q_scale, r_dof, r_scale, rho_ab, beta_ab, pis, eq_out, er_out, fallbacks, status
