"""Complete-data maximum likelihood: the closed-form initial-distribution
estimate and Poisson regressions for the per-interval transition rates.

Occurrences O_ij(k) are modeled as Poisson with mean E_i(k) * mu_ij^k(theta)
and a log link, so the local exposure enters as an offset.  One regression
is fitted per transition (i, j).  The saturated basis (one free rate per
interval) reproduces the classical occurrence/exposure rates O/E; the same
numbers are available directly through :func:`occurrence_exposure_rates`,
which tests use as an independent route.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import DomainError, IdentifiabilityError, NonConvergence

RATE_FLOOR = 1e-12
SCORE_TOL = 1e-8


@dataclass(frozen=True)
class RegressionSpec:
    """How the log-rates depend on time.

    basis
        "saturated" (free rate per interval), "linear" (intercept + slope
        in the interval covariate), or "poly" with ``degree`` >= 1.
    covariate_rule
        "midpoint": x_k is the midpoint of (s_{k-1}, min(s_k, tau_max));
        "right": the right endpoint, tau_max for the unbounded interval.
    """

    basis: str = "saturated"
    degree: int = 1
    covariate_rule: str = "midpoint"

    def __post_init__(self):
        if self.basis not in ("saturated", "linear", "poly"):
            raise DomainError(f"unknown basis {self.basis!r}")
        if self.basis == "poly" and self.degree < 1:
            raise DomainError("polynomial degree must be >= 1")

    @property
    def n_coef(self):
        if self.basis == "linear":
            return 2
        if self.basis == "poly":
            return self.degree + 1
        return None  # saturated: one per emitted interval

    def check_identifiable(self, K):
        if self.basis == "linear" and K < 2:
            raise DomainError("linear basis needs K >= 2 intervals")
        if self.basis == "poly" and self.degree + 1 > K:
            raise DomainError(f"poly({self.degree}) basis needs K >= {self.degree + 1}")

    def covariates(self, grid, tau_max=None):
        """Scalar covariate per interval, length K."""
        bp = grid.breakpoints
        K = grid.K
        if tau_max is None:
            tau_max = bp[-1] if K > 1 else 1.0
        right = np.append(bp[1:], np.inf)
        if self.covariate_rule == "right":
            return np.minimum(right, tau_max)
        if self.covariate_rule == "midpoint":
            return 0.5 * (bp + np.minimum(right, tau_max))
        raise DomainError(f"unknown covariate rule {self.covariate_rule!r}")


@dataclass(frozen=True)
class PoissonCell:
    """One regression observation: transition (i, j), interval k (1-based),
    observed/expected occurrence count, local exposure, time covariate."""

    i: int
    j: int
    k: int
    response: float
    exposure: float
    covariate: float


@dataclass
class ThetaEstimate:
    """Fitted coefficients per transition plus fit diagnostics.

    For parametric bases ``coef[(i, j)]`` follows the basis layout
    (intercept first); for the saturated basis it holds one log-rate per
    entry of ``intervals[(i, j)]``.
    """

    p: int
    spec: RegressionSpec
    coef: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    deviance: float = 0.0
    iterations: int = 0
    converged: bool = True
    dev_trace: dict = field(default_factory=dict)


def estimate_pi(B, total):
    """Closed-form initial-distribution estimate B / total."""
    B = np.asarray(B, dtype=float)
    if total <= 0.0:
        raise DomainError(f"total weight must be positive, got {total}")
    if np.any(B < 0):
        raise DomainError("initial counts must be nonnegative")
    if abs(B.sum() - total) > 1e-9 * max(1.0, total):
        raise DomainError(f"counts sum to {B.sum()}, expected {total}")
    return B / total


def build_design(stats, spec, grid, tau_max=None):
    """One :class:`PoissonCell` per (i, j != i, interval) with positive
    exposure; zero-exposure cells carry no information and are dropped."""
    x = spec.covariates(grid, tau_max)
    p, K = stats.p, stats.K
    cells = []
    for i in range(p):
        for j in range(p + 1):
            if j == i:
                continue
            for k in range(1, K + 1):
                e = stats.Eexp[k - 1, i]
                if e > 0.0:
                    cells.append(
                        PoissonCell(i, j, k, float(stats.O[k - 1, i, j]), float(e), float(x[k - 1]))
                    )
    return cells


def _design_matrix(cells, spec):
    if spec.basis == "saturated":
        ks = sorted({c.k for c in cells})
        pos = {k: col for col, k in enumerate(ks)}
        X = np.zeros((len(cells), len(ks)))
        for r, c in enumerate(cells):
            X[r, pos[c.k]] = 1.0
        return X, ks
    deg = 1 if spec.basis == "linear" else spec.degree
    x = np.array([c.covariate for c in cells])
    X = np.column_stack([x**d for d in range(deg + 1)])
    return X, None


def _deviance(y, mu):
    return float(2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) - (y - mu)))


def _fit_one(cells, spec, max_iter):
    """IRLS with log link and log-exposure offset for one transition.

    Runs past the contractual 1e-8 score tolerance to a polished target
    near machine precision; the quadratic tail usually makes that one
    extra step.  Stops early only once the deviance stagnates inside the
    contractual tolerance.
    """
    y = np.array([c.response for c in cells])
    expo = np.array([c.exposure for c in cells])
    X, ks = _design_matrix(cells, spec)
    q = X.shape[1]
    if np.linalg.matrix_rank(X) < q:
        raise IdentifiabilityError(
            f"design for transition ({cells[0].i},{cells[0].j}) is rank deficient"
        )
    offset = np.log(expo)
    polish_tol = 1e-13 * max(1.0, np.abs(y).sum())

    pooled = np.log(max(y.sum(), RATE_FLOOR) / expo.sum())
    if spec.basis == "saturated":
        theta = np.full(q, pooled)
    else:
        theta = np.zeros(q)
        theta[0] = pooled
    mu = np.exp(X @ theta + offset)
    dev = _deviance(y, mu)
    trace = [dev]
    for _ in range(max_iter):
        score = X.T @ (y - mu)
        worst = np.max(np.abs(score))
        if worst < polish_tol:
            break
        H = (X * mu[:, None]).T @ X
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            raise IdentifiabilityError(
                f"singular information matrix for transition ({cells[0].i},{cells[0].j})"
            )
        # step-halving keeps the deviance monotone
        lam = 1.0
        for _ in range(40):
            cand = theta + lam * step
            mu_c = np.exp(X @ cand + offset)
            dev_c = _deviance(y, mu_c)
            if dev_c <= dev + 1e-12:
                break
            lam *= 0.5
        stalled = dev_c >= dev - 1e-15 * (abs(dev) + 1.0)
        theta, mu, dev = cand, mu_c, dev_c
        trace.append(dev)
        if stalled and worst < SCORE_TOL:
            break
    converged = np.max(np.abs(X.T @ (y - mu))) < SCORE_TOL
    return theta, dev, trace, converged, ks


def fit_poisson(cells, spec, max_iter=100):
    """Fit every transition present in ``cells``; raises
    :class:`NonConvergence` (carrying the partial estimate) if any
    transition fails to satisfy the score equations in ``max_iter`` steps."""
    groups = {}
    for c in cells:
        groups.setdefault((c.i, c.j), []).append(c)
    if not groups:
        raise DomainError("no cells with positive exposure")
    p = max(c.i for c in cells) + 1
    est = ThetaEstimate(p=p, spec=spec)
    failed = []
    for (i, j), grp in sorted(groups.items()):
        theta, dev, trace, ok, ks = _fit_one(grp, spec, max_iter)
        est.coef[(i, j)] = theta
        est.deviance += dev
        est.dev_trace[(i, j)] = trace
        est.iterations = max(est.iterations, len(trace) - 1)
        if ks is not None:
            est.intervals[(i, j)] = ks
        if not ok:
            failed.append((i, j))
    if failed:
        est.converged = False
        raise NonConvergence(f"no convergence for transitions {failed}", estimate=est)
    return est


def rates_from_theta(theta, spec, grid, tau_max=None):
    """Rate array of shape (K, p, p+1); NaN marks cells the fit could not
    determine (zero exposure everywhere the saturated basis looked, or a
    transition with no cells at all).  Determined rates are floored at
    ``RATE_FLOOR`` so reconstructed models stay strictly sub-intensity."""
    p = theta.p
    K = grid.K
    rates = np.full((K, p, p + 1), np.nan)
    x = spec.covariates(grid, tau_max)
    for (i, j), coef in theta.coef.items():
        if spec.basis == "saturated":
            for pos, k in enumerate(theta.intervals[(i, j)]):
                rates[k - 1, i, j] = max(np.exp(coef[pos]), RATE_FLOOR)
        else:
            deg = len(coef) - 1
            log_rate = sum(coef[d] * x**d for d in range(deg + 1))
            rates[:, i, j] = np.maximum(np.exp(log_rate), RATE_FLOOR)
    for i in range(p):
        rates[:, i, i] = 0.0
    return rates


def occurrence_exposure_rates(stats):
    """Closed-form saturated estimates O/E; NaN where the exposure is zero.

    Independent of the IRLS path on purpose: the two must agree on every
    determined cell.
    """
    rates = np.full_like(stats.O, np.nan)
    pos = stats.Eexp > 0.0
    for j in range(stats.p + 1):
        rates[:, :, j] = np.where(pos, stats.O[:, :, j] / np.where(pos, stats.Eexp, 1.0), np.nan)
    for i in range(stats.p):
        rates[:, i, i] = 0.0
    return rates


def subintensities_from_rates(rates):
    """Assemble the (K, p, p) sub-intensity stack: transient off-diagonals
    and exit column from ``rates``, diagonals minus the row sums."""
    if np.isnan(rates).any():
        raise DomainError("rate array still has undetermined (NaN) cells")
    K, p = rates.shape[0], rates.shape[1]
    T = np.array(rates[:, :, :p])
    for i in range(p):
        T[:, i, i] = 0.0
    row_out = T.sum(axis=2) + rates[:, :, p]
    for i in range(p):
        T[:, i, i] = -row_out[:, i]
    return T


def rates_from_model(model):
    """Inverse of :func:`subintensities_from_rates` for an existing model."""
    K, p = model.K, model.p
    rates = np.zeros((K, p, p + 1))
    rates[:, :, :p] = model.T
    for i in range(p):
        rates[:, i, i] = 0.0
    rates[:, :, p] = model.exit_vectors
    return rates


def complete_loglik(stats, pi, rates):
    """Complete-data log likelihood; 0*log(0) counts as 0."""
    pi = np.asarray(pi, dtype=float)
    if np.any((stats.B > 0) & (pi <= 0.0)):
        raise DomainError("positive initial count on a zero-probability state")
    p = stats.p
    mask = ~np.eye(p + 1, dtype=bool)[:p, :]  # all (i, j != i) pairs
    O = stats.O[:, mask]
    mu = np.asarray(rates, dtype=float)[:, mask]
    if np.any((O > 0) & (mu <= 0.0)):
        raise DomainError("positive occurrence on a zero rate")
    expo = np.broadcast_to(stats.Eexp[:, :, None], stats.O.shape)[:, mask]
    return float(xlogy(stats.B, pi).sum() + (xlogy(O, mu) - expo * mu).sum())
