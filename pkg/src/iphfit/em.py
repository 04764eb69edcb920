"""EM fitting of the absorption-time model from weighted observations.

The E-step turns each observed absorption time into conditional expected
initial counts, occurrences and exposures per grid interval.  All coupling
integrals reduce to top-right blocks of 2p x 2p matrix exponentials, batched
per interval across observations.  The M-step is the closed-form initial
distribution update plus per-transition Poisson regressions.

Observations sharing a value are merged up front (weights add), so cost
scales with the number of distinct values and results are invariant under
permutation of the input.
"""

from dataclasses import dataclass, field

import numpy as np

from . import poisson_glm as glm
from .errors import DegenerateError, DomainError
from .matexp import expm_multi, vanloan_multi
from .model import Grid, IPHModel
from .simulate import SufficientStats

# Conditional expected statistics share the complete-data layout.
ConditionalStats = SufficientStats


@dataclass(frozen=True)
class WeightedSample:
    """Positive absorption times with positive weights (default 1)."""

    values: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.ones_like(v) if self.weights is None else np.asarray(self.weights, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("sample must be a nonempty 1-d collection")
        if w.shape != v.shape:
            raise DomainError(f"{v.size} values but {w.size} weights")
        if np.any(~np.isfinite(v)) or np.any(v <= 0.0):
            bad = int(np.nonzero(~np.isfinite(v) | (v <= 0.0))[0][0])
            raise DomainError(f"observation {bad} is not a positive real: {v[bad]}")
        if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
            bad = int(np.nonzero(~np.isfinite(w) | (w <= 0.0))[0][0])
            raise DomainError(f"weight {bad} is not a positive real: {w[bad]}")
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def total_weight(self):
        return float(self.weights.sum())

    def merged(self):
        """Equivalent sample with sorted distinct values, weights summed."""
        vals, inverse = np.unique(self.values, return_inverse=True)
        wts = np.zeros_like(vals)
        np.add.at(wts, inverse, self.weights)
        return WeightedSample(vals, wts)


@dataclass(frozen=True)
class EMConfig:
    """Fit configuration.

    breakpoints gives the interior grid points explicitly; alternatively
    quantiles=K places them at weighted sample quantiles j/K.  chunk_size
    bounds the E-step batch length (accumulation order is fixed, so the
    result does not depend on it).
    """

    p: int
    breakpoints: tuple = None
    quantiles: int = None
    spec: glm.RegressionSpec = field(default_factory=glm.RegressionSpec)
    tol_rel_loglik: float = 1e-7
    max_iter: int = 1000
    seed: int = 0
    chunk_size: int = 4096
    random_init_pi: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise DomainError("p must be >= 1")
        if self.tol_rel_loglik <= 0:
            raise DomainError("tolerance must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if self.breakpoints is None and self.quantiles is None:
            raise DomainError("give either explicit breakpoints or quantiles=K")
        if self.breakpoints is not None:
            object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))


@dataclass
class FitResult:
    model: IPHModel
    loglik_trace: list
    iterations: int
    converged: bool
    theta: glm.ThetaEstimate = None
    messages: list = field(default_factory=list)


def loglik(model, data):
    """Weighted log likelihood sum_n w_n log f(tau_n)."""
    dens = np.atleast_1d(model.density(data.values))
    if np.any(dens <= 0.0):
        bad = int(np.nonzero(dens <= 0.0)[0][0])
        raise DegenerateError(
            f"model density vanishes at observation {bad} (tau={data.values[bad]})"
        )
    return float(data.weights @ np.log(dens))


def _weighted_quantile_breakpoints(data, K):
    order = np.argsort(data.values)
    v = data.values[order]
    cw = np.cumsum(data.weights[order]) / data.weights.sum()
    levels = np.arange(1, K) / K
    bps = v[np.searchsorted(cw, levels, side="left")]
    bps = np.unique(bps[bps > 0])
    return bps


def resolve_grid(config, data):
    if config.breakpoints is not None:
        return Grid.from_interior(config.breakpoints)
    return Grid.from_interior(_weighted_quantile_breakpoints(data, config.quantiles))


def init_params(config, data):
    """Starting model: uniform (or Dirichlet) initial distribution, all
    off-diagonal and exit rates drawn uniformly from [0.5c, 1.5c] with
    c = p / weighted mean of the data."""
    data = data.merged()
    grid = resolve_grid(config, data)
    rng = np.random.default_rng(config.seed)
    p, K = config.p, grid.K
    if config.random_init_pi:
        pi = rng.dirichlet(np.ones(p))
    else:
        pi = np.full(p, 1.0 / p)
    mean_tau = float(data.weights @ data.values) / data.total_weight
    c = p / mean_tau
    draws = rng.uniform(0.5 * c, 1.5 * c, size=(K, p, p + 1))
    for i in range(p):
        draws[:, i, i] = 0.0
    T = glm.subintensities_from_rates(draws)
    return IPHModel(pi, grid, T)


def _estep_arrays(model, data, chunk=4096):
    """Conditional expected statistics and the log likelihood in one sweep.

    Returns (stats, loglik).  ``data`` must already be merged/sorted;
    ``chunk`` bounds the batch length of the stacked exponentials (the
    accumulation order, hence the result, is fixed for a given chunk).
    """
    p, K = model.p, model.K
    grid = model.grid
    bp = grid.breakpoints
    T = model.T
    tvec = model.exit_vectors
    pi = model.pi
    vals, wts = data.values, data.weights
    N = vals.size

    kn = np.atleast_1d(grid.interval(vals))
    E_int = model.interval_exponentials  # (K-1, p, p)

    # head vectors pi * A(1, l), l = 0..K-1
    a_s = np.empty((K, p))
    a_s[0] = pi
    for l in range(1, K):
        a_s[l] = a_s[l - 1] @ E_int[l - 1]

    # per-observation exponential over the final partial interval
    M = np.empty((N, p, p))
    for k in np.unique(kn):
        m = kn == k
        M[m] = expm_multi(T[k - 1] * (vals[m] - bp[k - 1])[:, None, None])
    exit_n = tvec[kn - 1]  # (N, p)
    u = np.einsum("nij,nj->ni", M, exit_n)  # b(k_n) per observation
    a_n = np.einsum("ni,nij->nj", a_s[kn - 1], M)  # head vector at tau_n

    # absorb-at-tau vectors b(l) for l = 1..k_n, backward recursion
    b = np.zeros((N, K, p))
    b[np.arange(N), kn - 1] = u
    for l in range(K - 1, 0, -1):
        m = kn >= l + 1
        if m.any():
            b[m, l - 1] = np.einsum("ij,nj->ni", E_int[l - 1], b[m, l])

    dens = np.einsum("i,ni->n", pi, b[:, 0])
    if np.any(dens <= 0.0):
        bad = int(np.nonzero(dens <= 0.0)[0][0])
        raise DegenerateError(
            f"model density vanishes at observation {bad} (tau={vals[bad]})"
        )
    ll = float(wts @ np.log(dens))
    wf = wts / dens

    stats = SufficientStats.zeros(p, K)
    stats.total_weight = float(wts.sum())
    stats.B = pi * (wf @ b[:, 0])

    # absorption occurrences: only the interval containing tau contributes
    contrib = (wf[:, None] * a_n) * exit_n  # (N, p)
    for k in np.unique(kn):
        m = kn == k
        stats.O[k - 1, :, p] = contrib[m].sum(axis=0)

    # coupling integrals per interval, batched over observations
    for k in range(1, K + 1):
        sel = np.nonzero(kn >= k)[0]
        if sel.size == 0:
            continue
        Csum = np.zeros((p, p))
        for lo in range(0, sel.size, chunk):
            idx = sel[lo : lo + chunk]
            at_k = kn[idx] == k
            dts = np.where(at_k, vals[idx] - bp[k - 1], (bp[k] if k < K else 0.0) - bp[k - 1])
            # b(k+1): the absorb vector one interval later, or the exit
            # rates when tau lies in this interval
            bk1 = np.where(at_k[:, None], exit_n[idx], b[idx, min(k, K - 1)])
            B_blocks = bk1[:, :, None] * a_s[k - 1][None, None, :]
            Tk = np.broadcast_to(T[k - 1], (idx.size, p, p))
            _, C = vanloan_multi(Tk, B_blocks, dts)
            Csum += np.einsum("n,nij->ij", wf[idx], C)
        stats.Eexp[k - 1] = np.diag(Csum)
        stats.O[k - 1, :, :p] += T[k - 1] * Csum.T
        stats.O[k - 1, :, :p][np.arange(p), np.arange(p)] = 0.0
    return stats, ll


def estep(model, data):
    """Conditional expected sufficient statistics given the observations."""
    return _estep_arrays(model, data.merged())[0]


def mstep(stats, spec, grid, tau_max=None, prev_rates=None):
    """Maximize the expected complete-data likelihood.

    Returns (pi, T, theta, messages).  Cells the regression cannot
    determine keep their previous rate when ``prev_rates`` is given
    (flagged in messages), else fall back to the rate floor.
    """
    pi = glm.estimate_pi(stats.B, stats.total_weight)
    cells = glm.build_design(stats, spec, grid, tau_max)
    theta = glm.fit_poisson(cells, spec)
    rates = glm.rates_from_theta(theta, spec, grid, tau_max)
    messages = []
    undetermined = np.isnan(rates)
    if undetermined.any():
        where = np.argwhere(undetermined)
        messages.append(
            f"{where.shape[0]} rate cells undetermined (no exposure); "
            + ("kept previous values" if prev_rates is not None else "set to rate floor")
        )
        fill = prev_rates if prev_rates is not None else np.full_like(rates, glm.RATE_FLOOR)
        rates = np.where(undetermined, fill, rates)
    T = glm.subintensities_from_rates(rates)
    return pi, T, theta, messages


def fit(data, config):
    """Run the EM loop until the relative log-likelihood gain drops below
    the tolerance or the iteration cap is hit (a flagged, not failed, fit)."""
    data = data.merged()
    model = init_params(config, data)
    if config.spec.basis != "saturated":
        config.spec.check_identifiable(model.K)
    grid = model.grid
    tau_max = float(data.values.max())

    trace = []
    theta = None
    messages = []
    converged = False
    for _ in range(config.max_iter):
        stats, ll = _estep_arrays(model, data, config.chunk_size)
        trace.append(ll)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < config.tol_rel_loglik * max(
            1e-300, abs(trace[-2])
        ):
            converged = True
            break
        prev_rates = glm.rates_from_model(model)
        pi, T, theta, msgs = mstep(stats, config.spec, grid, tau_max, prev_rates)
        messages.extend(msgs)
        model = IPHModel(pi, grid, T)
    else:
        trace.append(loglik(model, data))
    return FitResult(
        model=model,
        loglik_trace=trace,
        iterations=len(trace) - 1,
        converged=converged,
        theta=theta,
        messages=list(dict.fromkeys(messages)),
    )
