"""Homogeneous phase-type approximation of the piecewise model.

The approximant runs m Erlang stages at rate n; stage l applies the
sub-stochastic kernel

    Q_l = sum_k omega_k(l, n) T_k / n + I,

where omega_k(l, n) is the probability that the l-th stage completes inside
grid interval k (a difference of Erlang cdfs).  Absorption during stage l
happens with probability v_{l-1} (I - Q_l) e with v_l = pi Q_1 ... Q_l, so
the density is a mixture of Erlang densities.  Everything is computed in
the original p-dimensional state space; the m*p x m*p sub-intensity matrix
is only materialized on request.
"""

import math

import numpy as np
from scipy.special import gammainc, gammaln

from .errors import DomainError, InvalidRate, SizeLimit

MATERIALIZE_LIMIT = 10**5
_COEF_CLAMP = 1e-12


def min_valid_n(model):
    """Smallest uniformization rate keeping every Q_l sub-stochastic."""
    return float(np.max(-np.diagonal(model.T, axis1=1, axis2=2)))


def choose_m(n, tau_max):
    """Number of stages so the approximation is faithful up to tau_max."""
    if tau_max <= 0:
        raise DomainError("tau_max must be positive")
    return int(math.ceil(n * tau_max))


def erlang_weights(grid, l, n):
    """Probability that stage l of rate n completes in each grid interval."""
    if l < 1 or n <= 0:
        raise DomainError(f"need stage l >= 1 and rate n > 0, got ({l}, {n})")
    cdf = gammainc(l, n * grid.breakpoints)  # Erlang cdf at s_0..s_{K-1}
    return np.append(cdf[1:], 1.0) - cdf


def _erlang_weight_table(grid, m, n):
    ls = np.arange(1, m + 1, dtype=float)
    cdf = gammainc(ls[:, None], n * grid.breakpoints[None, :])
    return np.append(cdf[:, 1:], np.ones((m, 1)), axis=1) - cdf  # (m, K)


def q_factor(model, l, n):
    """The stage-l kernel; requires n >= min_valid_n(model)."""
    floor = min_valid_n(model)
    if n < floor:
        raise InvalidRate(f"n={n} below the minimum valid rate {floor}")
    w = erlang_weights(model.grid, l, n)
    return np.eye(model.p) + np.tensordot(w, model.T, axes=1) / n


class PHApproximation:
    """Stage scan for a given (n, m): keeps the accumulated row vectors
    v_l = pi Q_1 ... Q_l and the Erlang mixture coefficients."""

    def __init__(self, model, n, m):
        floor = min_valid_n(model)
        if n < floor:
            raise InvalidRate(f"n={n} below the minimum valid rate {floor}")
        if m < 1:
            raise DomainError("m must be >= 1")
        self.model = model
        self.n = float(n)
        self.m = int(m)

        p = model.p
        omega = _erlang_weight_table(model.grid, self.m - 1, n)  # stages 1..m-1
        self.qprods = np.empty((self.m, p))  # v_0 .. v_{m-1}
        self.qprods[0] = model.pi
        v = model.pi.copy()
        for l in range(1, self.m):
            Q = np.eye(p) + np.tensordot(omega[l - 1], model.T, axes=1) / self.n
            v = v @ Q
            self.qprods[l] = v

        # absorption mass per stage; stage m collects the remainder
        r = self.qprods.sum(axis=1)  # v_l . e
        coef = np.append(r[:-1] - r[1:], r[-1])
        small_neg = (coef < 0) & (coef > -_COEF_CLAMP)
        coef[small_neg] = 0.0
        self.mixture_coefficients = coef  # (m,), stage l = index l-1

    def density(self, t):
        """Density of the approximant at t (scalar or array), assembled in
        log space so large stage counts cannot overflow."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        ts = np.atleast_1d(t).astype(float)
        if np.any(ts <= 0.0):
            raise DomainError("density defined for t > 0")
        ls = np.arange(1, self.m + 1, dtype=float)
        log_pdf = (
            ls[None, :] * np.log(self.n)
            + (ls[None, :] - 1.0) * np.log(ts[:, None])
            - self.n * ts[:, None]
            - gammaln(ls[None, :])
        )
        out = np.exp(log_pdf) @ self.mixture_coefficients
        return float(out[0]) if scalar else out


def approx_density(model, n, m, t):
    """One-shot density of the (n, m) approximant at t."""
    return PHApproximation(model, n, m).density(t)


def materialize_subintensity(model, n, m):
    """Dense m*p x m*p sub-intensity of the approximant: -n I blocks on the
    diagonal, n Q_l on the superdiagonal.  Guarded by MATERIALIZE_LIMIT."""
    p = model.p
    if m * p > MATERIALIZE_LIMIT:
        raise SizeLimit(f"m*p = {m * p} exceeds the materialization guard {MATERIALIZE_LIMIT}")
    floor = min_valid_n(model)
    if n < floor:
        raise InvalidRate(f"n={n} below the minimum valid rate {floor}")
    omega = _erlang_weight_table(model.grid, max(m - 1, 0), n)
    big = np.zeros((m * p, m * p))
    for l in range(m):
        big[l * p : (l + 1) * p, l * p : (l + 1) * p] = -n * np.eye(p)
        if l < m - 1:
            Q = np.eye(p) + np.tensordot(omega[l], model.T, axes=1) / n
            big[l * p : (l + 1) * p, (l + 1) * p : (l + 2) * p] = n * Q
    return big


def initial_vector(model, m):
    """Initial distribution of the approximant: pi on the first block."""
    out = np.zeros(m * model.p)
    out[: model.p] = model.pi
    return out
