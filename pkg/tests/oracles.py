"""Independent reference computations used as test oracles.

Everything here deliberately avoids the package's own kernels: matrix
exponentials come from scipy, integrals from composite quadrature or
closed-form series.
"""

import numpy as np
import scipy.linalg


def simpson_coupling_integral(T, B, dt, panels=10_000):
    """Composite-Simpson value of int_0^dt e^{T(dt-u)} B e^{Tu} du.

    Uses a cumulative product of scipy exponentials over a uniform grid;
    the reversed-index trick supplies e^{T(dt-u)} from the same table.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    nodes = 2 * panels
    h = dt / nodes
    step = scipy.linalg.expm(T * h)
    p = T.shape[0]
    Es = np.empty((nodes + 1, p, p))
    Es[0] = np.eye(p)
    for j in range(1, nodes + 1):
        Es[j] = Es[j - 1] @ step
    integrand = np.einsum("nij,jk,nkl->nil", Es[::-1], B, Es)
    w = np.ones(nodes + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (h / 3.0) * np.einsum("n,nij->ij", w, integrand)


def random_subintensity(rng, p, rate_scale=2.0):
    """Random strictly sub-stochastic generator block: nonnegative
    off-diagonals, positive exit rate in every row."""
    M = rng.uniform(0.0, rate_scale, size=(p, p))
    exit_rates = rng.uniform(0.1 * rate_scale, rate_scale, size=p)
    np.fill_diagonal(M, 0.0)
    T = M.copy()
    np.fill_diagonal(T, -(M.sum(axis=1) + exit_rates))
    return T


def random_model_arrays(rng, p, K, bp_scale=1.0, rate_scale=2.0):
    """Random valid (pi, interior breakpoints, T stack)."""
    pi = rng.dirichlet(np.ones(p))
    interior = np.sort(rng.uniform(0.2 * bp_scale, 2.0 * bp_scale, size=K - 1))
    T = np.stack([random_subintensity(rng, p, rate_scale) for _ in range(K)])
    return pi, interior, T


def erlang_cdf_series(t, stages, rate):
    """1 - sum_{j < stages} e^{-rt} (rt)^j / j!  (direct series)."""
    rt = rate * t
    term = np.exp(-rt)
    total = term
    for j in range(1, stages):
        term = term * rt / j
        total += term
    return 1.0 - total


def truncated_normal_density(x, mean, var):
    """Density of a normal(mean, var) conditioned on being positive."""
    from scipy.stats import norm

    sd = np.sqrt(var)
    mass = norm.sf(0.0, loc=mean, scale=sd)
    return norm.pdf(x, loc=mean, scale=sd) / mass


def bimodal_density(x, w=0.55, m1=2.0, m2=4.0, var=0.5):
    """0-truncated two-component normal mixture."""
    from scipy.stats import norm

    sd = np.sqrt(var)
    raw = w * norm.pdf(x, m1, sd) + (1 - w) * norm.pdf(x, m2, sd)
    mass = w * norm.sf(0.0, m1, sd) + (1 - w) * norm.sf(0.0, m2, sd)
    return raw / mass


def total_variation(model, target_pdf, hi, n=4000):
    """TV distance between a fitted model density and a target density on
    (0, hi], by midpoint quadrature, plus the tail mass beyond hi."""
    xs = (np.arange(n) + 0.5) * (hi / n)
    diff = np.abs(model.density(xs) - target_pdf(xs))
    tail = model.survival(hi)
    from scipy.integrate import quad

    target_tail = quad(target_pdf, hi, np.inf)[0]
    return 0.5 * (np.sum(diff) * (hi / n) + tail + target_tail)
