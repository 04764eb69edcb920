"""Absorption-time model with piecewise-constant transition rates.

The model is a Markov jump process on ``p`` transient states plus one
absorbing state.  Time is partitioned by a grid ``0 = s_0 < s_1 < ... <
s_{K-1} < s_K = inf`` into K intervals, left-open/right-closed, and the
sub-intensity matrix among transient states is a constant ``T_k`` on the
k-th interval.  The law of the absorption time is evaluated through
products of interval matrix exponentials.

Conventions
-----------
* Interval indices ``k`` are 1-based (k in 1..K), matching the usual
  actuarial notation; internal arrays are indexed ``k - 1``.
* State indices are 0-based (states 0..p-1 transient, ``p`` absorbing)
  wherever they appear in the Python API.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateError, DomainError, InvalidMatrix
from .matexp import expm, expm_multi

# survival below this has lost all precision to gradual underflow; hazards
# computed from it would be garbage ratios
HAZARD_SURVIVAL_FLOOR = 1e-300


@dataclass(frozen=True)
class Grid:
    """Time grid: finite breakpoints ``[0, s_1, ..., s_{K-1}]`` spanning K
    intervals, the last one unbounded."""

    breakpoints: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 1:
            raise DomainError("grid needs at least the leading 0 breakpoint")
        if bp[0] != 0.0:
            raise DomainError(f"grid must start at 0, got {bp[0]}")
        if not np.all(np.isfinite(bp)):
            raise DomainError("grid breakpoints must be finite")
        if bp.size > 1 and not np.all(np.diff(bp) > 0):
            raise DomainError("grid breakpoints must be strictly increasing")
        bp.flags.writeable = False
        object.__setattr__(self, "breakpoints", bp)

    @classmethod
    def from_interior(cls, interior):
        """Build from the finite interior breakpoints ``[s_1, ..., s_{K-1}]``."""
        return cls(np.concatenate(([0.0], np.asarray(interior, dtype=float))))

    @property
    def K(self):
        return self.breakpoints.size

    @property
    def interior(self):
        return self.breakpoints[1:]

    @property
    def widths(self):
        """Widths of the K-1 finite intervals."""
        return np.diff(self.breakpoints)

    def interval(self, x):
        """1-based interval index k with x in (s_{k-1}, s_k]; vectorized."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0.0):
            raise DomainError("interval lookup requires x > 0")
        k = np.searchsorted(self.breakpoints, x, side="left")
        k = np.minimum(k, self.K)
        return int(k) if k.ndim == 0 else k.astype(int)

    def clipped_length(self, k, tau):
        """Length of (s_{k-1}, s_k] intersected with (0, tau]."""
        lo = self.breakpoints[k - 1]
        hi = self.breakpoints[k] if k < self.K else np.inf
        return max(0.0, min(hi, tau) - min(lo, tau))


class IPHModel:
    """Initial distribution ``pi`` over p transient states plus one
    sub-intensity matrix per grid interval.

    Parameters
    ----------
    pi : array, shape (p,)
        Initial distribution over the transient states.
    grid : Grid or array of interior breakpoints
    T : array, shape (K, p, p)
        Sub-intensity matrices, one per interval.
    meta : dict, optional
        Free-form annotations carried through serialization.
    """

    def __init__(self, pi, grid, T, meta=None):
        if not isinstance(grid, Grid):
            grid = Grid.from_interior(grid)
        T = np.asarray(T, dtype=float)
        if T.ndim == 2:
            T = T[None, :, :]
        pi = np.asarray(pi, dtype=float)
        if T.ndim != 3 or T.shape[1] != T.shape[2]:
            raise InvalidMatrix(f"T must be a (K, p, p) stack, got shape {T.shape}")
        if T.shape[0] != grid.K:
            raise InvalidMatrix(
                f"got {T.shape[0]} matrices for a grid of {grid.K} intervals"
            )
        if pi.shape != (T.shape[1],):
            raise InvalidMatrix(f"pi has shape {pi.shape}, expected ({T.shape[1]},)")
        self.pi = pi
        self.grid = grid
        self.T = T
        self.meta = dict(meta) if meta else {}

    @property
    def p(self):
        return self.T.shape[1]

    @property
    def K(self):
        return self.grid.K

    @property
    def exit_vectors(self):
        """Rates into the absorbing state, one length-p vector per interval."""
        return -self.T.sum(axis=2)

    def __repr__(self):
        return f"IPHModel(p={self.p}, K={self.K})"

    # -- cached interval kernels ------------------------------------------

    @cached_property
    def interval_exponentials(self):
        """e^{T_k * (s_k - s_{k-1})} for the K-1 finite intervals."""
        if self.K == 1:
            return np.empty((0, self.p, self.p))
        return expm_multi(self.T[:-1] * self.grid.widths[:, None, None])

    @cached_property
    def prefix_products(self):
        """Stack of forward products: entry ``l`` is the product over the
        first l finite intervals (entry 0 is the identity)."""
        A = np.empty((self.K, self.p, self.p))
        A[0] = np.eye(self.p)
        E = self.interval_exponentials
        for l in range(1, self.K):
            A[l] = A[l - 1] @ E[l - 1]
        return A

    # -- transition structure ---------------------------------------------

    def forward_product(self, k1, k2):
        """Product of interval exponentials over k = k1..k2 (1-based,
        k2 <= K-1); identity when k2 < k1."""
        if k2 < k1:
            return np.eye(self.p)
        if k1 < 1 or k2 > self.K - 1:
            raise DomainError(f"forward product needs 1 <= k1, k2 <= K-1, got ({k1}, {k2})")
        out = np.eye(self.p)
        E = self.interval_exponentials
        for l in range(k1, k2 + 1):
            out = out @ E[l - 1]
        return out

    def sub_transition(self, s, t):
        """Sub-probability matrix of staying transient from time s to t."""
        s = float(s)
        t = float(t)
        if s < 0 or not np.isfinite(s) or not np.isfinite(t):
            raise DomainError(f"need 0 <= s <= t finite, got ({s}, {t})")
        if s > t:
            raise DomainError(f"need s <= t, got s={s} > t={t}")
        if s == t:
            return np.eye(self.p)
        bp = self.grid.breakpoints
        ks = self.grid.interval(s) if s > 0 else 1
        kt = self.grid.interval(t)
        if ks == kt:
            return expm(self.T[ks - 1], t - s)
        right_edge = bp[ks] if ks < self.K else np.inf
        first = expm(self.T[ks - 1], right_edge - s)
        middle = self.forward_product(ks + 1, kt - 1)
        last = expm(self.T[kt - 1], t - bp[kt - 1])
        return first @ middle @ last

    # -- distribution functions -------------------------------------------

    def _eval(self, x):
        """Density and survival at the points of x, grouped per interval so
        each group costs one stacked exponential."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xs = np.atleast_1d(x)
        if np.any(xs <= 0.0) or not np.all(np.isfinite(xs)):
            raise DomainError("density/survival require finite x > 0")
        ks = self.grid.interval(xs)
        dens = np.empty(xs.shape)
        surv = np.empty(xs.shape)
        bp = self.grid.breakpoints
        tvec = self.exit_vectors
        A = self.prefix_products
        for k in np.unique(ks):
            m = ks == k
            dt = xs[m] - bp[k - 1]
            Ms = expm_multi(self.T[k - 1] * dt[:, None, None])
            head = self.pi @ A[k - 1]
            rows = np.einsum("i,nij->nj", head, Ms)
            dens[m] = rows @ tvec[k - 1]
            surv[m] = rows.sum(axis=1)
        if scalar:
            return float(dens[0]), float(surv[0])
        return dens, surv

    def density(self, x):
        return self._eval(x)[0]

    def survival(self, x):
        return self._eval(x)[1]

    def cdf(self, x):
        return 1.0 - self.survival(x)

    def hazard(self, x):
        dens, surv = self._eval(x)
        if np.any(np.asarray(surv) < HAZARD_SURVIVAL_FLOOR):
            raise DegenerateError("hazard undefined where survival has underflowed")
        return dens / surv

    def mean(self):
        """Expected absorption time, from the closed-form interval integrals."""
        bp_int = _expm_integrals(self.T[:-1], self.grid.widths) if self.K > 1 else []
        total = 0.0
        ones = np.ones(self.p)
        for k in range(1, self.K):
            head = self.pi @ self.prefix_products[k - 1]
            total += head @ bp_int[k - 1] @ ones
        head = self.pi @ self.prefix_products[self.K - 1]
        tail = np.linalg.solve(-self.T[-1], ones)
        return float(total + head @ tail)

    def tail_time(self, eps=1e-8):
        """Smallest x (to ~1e-6 relative) with survival(x) <= eps."""
        hi = max(1.0, 2.0 * self.grid.breakpoints[-1] or 1.0)
        while self.survival(hi) > eps:
            hi *= 2.0
            if hi > 1e300:
                raise DegenerateError("survival does not drop below eps")
        lo = 0.0
        while hi - lo > 1e-6 * hi:
            mid = 0.5 * (lo + hi)
            if mid <= 0 or self.survival(mid) > eps:
                lo = mid
            else:
                hi = mid
        return hi

    # -- smoothness at the breakpoints ------------------------------------

    def density_gap(self, k):
        """|f(s_k-) - f(s_k+)| at the k-th finite breakpoint, k in 1..K-1."""
        if not 1 <= k <= self.K - 1:
            raise DomainError(f"gap defined for k in 1..{self.K - 1}, got {k}")
        head = self.pi @ self.prefix_products[k]
        tvec = self.exit_vectors
        return float(abs(head @ (tvec[k - 1] - tvec[k])))

    def smoothness_report(self, tol=1e-10):
        """Continuity/differentiability flags from the exit-vector structure."""
        gaps = [self.density_gap(k) for k in range(1, self.K)]
        continuous = all(g < tol for g in gaps)
        tvec = self.exit_vectors
        curv = np.einsum("kij,kj->ki", self.T, tvec)  # -T_k^2 e = T_k t_k
        same_exit = bool(np.all(np.abs(tvec - tvec[0]) < tol))
        same_curv = bool(np.all(np.abs(curv - curv[0]) < tol))
        return {"continuous": continuous, "differentiable": same_exit and same_curv}

    # -- conditional law given the absorption time -------------------------

    def _future_vector(self, t, tau):
        """P(t, tau) @ exit_rates(tau), the absorb-at-tau weight per state."""
        return self.sub_transition(t, tau) @ self.exit_vectors[self.grid.interval(tau) - 1]

    def conditional_initial(self, tau):
        """Initial distribution of the process conditioned to absorb at tau."""
        b = self._future_vector(0.0, tau)
        f = float(self.pi @ b)
        if f <= 0.0:
            raise DegenerateError(f"density is zero at tau={tau}")
        return self.pi * b / f

    def conditional_transition(self, tau, t, s):
        """Transition matrix of the conditioned process from time t to s,
        0 <= t <= s < tau.  Rows with unreachable source states are zero."""
        if not 0 <= t <= s < tau:
            raise DomainError(f"need 0 <= t <= s < tau, got t={t}, s={s}, tau={tau}")
        b_s = self._future_vector(s, tau)
        b_t = self._future_vector(t, tau)
        P = self.sub_transition(t, s) * b_s[None, :]
        out = np.zeros_like(P)
        ok = b_t > 0.0
        out[ok] = P[ok] / b_t[ok, None]
        return out

    def conditional_intensity(self, tau, t, i, j):
        """Jump intensity i -> j (0-based transient states) of the
        conditioned process at time t < tau."""
        if not 0 <= t < tau:
            raise DomainError(f"need 0 <= t < tau, got t={t}, tau={tau}")
        if i == j:
            raise DomainError("intensity defined for i != j")
        b_t = self._future_vector(t, tau)
        if b_t[i] <= 0.0:
            raise DegenerateError(f"state {i} cannot reach absorption at tau={tau}")
        k = self.grid.interval(t) if t > 0 else 1
        return float(self.T[k - 1, i, j] * b_t[j] / b_t[i])

    # -- serialization ------------------------------------------------------

    def to_dict(self, theta=None):
        doc = {
            "p": self.p,
            "breakpoints": self.grid.interior.tolist(),
            "pi": self.pi.tolist(),
            "T": [Tk.tolist() for Tk in self.T],
            "meta": self.meta,
        }
        if theta is not None:
            doc["theta"] = theta
        return doc

    @classmethod
    def from_dict(cls, doc):
        pi = np.asarray(doc["pi"], dtype=float)
        T = np.asarray(doc["T"], dtype=float)
        if len(pi) != doc["p"] or T.shape[1:] != (doc["p"], doc["p"]):
            raise InvalidMatrix("model document is inconsistent with its stated p")
        return cls(pi, Grid.from_interior(doc["breakpoints"]), T, meta=doc.get("meta"))


class ConditionalLaw:
    """The jump process conditioned on its absorption time tau."""

    def __init__(self, model, tau):
        if model.density(tau) <= 0.0:
            raise DegenerateError(f"conditioning on tau={tau} where the density vanishes")
        self.model = model
        self.tau = float(tau)

    def initial(self):
        return self.model.conditional_initial(self.tau)

    def transition(self, t, s):
        return self.model.conditional_transition(self.tau, t, s)

    def intensity(self, t, i, j):
        return self.model.conditional_intensity(self.tau, t, i, j)


def _expm_integrals(T_stack, widths):
    """int_0^w e^{T u} du per stacked matrix, via the (2p x 2p) block
    exponential with the identity as coupling block and a zero lower-right
    generator."""
    T_stack = np.asarray(T_stack, dtype=float)
    n, p = T_stack.shape[0], T_stack.shape[-1]
    G = np.zeros((n, 2 * p, 2 * p))
    G[:, :p, :p] = T_stack
    G[:, :p, p:] = np.eye(p)
    F = expm_multi(G * np.asarray(widths)[:, None, None])
    return F[:, :p, p:]


def validate(model, structural_tol=1e-10, normalization_tol=1e-12):
    """Collect every violated model invariant as a human-readable string.

    Returns an empty list for a valid model.  ``k`` in messages is the
    1-based interval, ``i``/``j`` are 0-based states.
    """
    issues = []
    pi, T = model.pi, model.T
    if np.any(pi < -normalization_tol):
        for i in np.nonzero(pi < -normalization_tol)[0]:
            issues.append(f"pi[{i}] = {pi[i]} is negative")
    if abs(pi.sum() - 1.0) > normalization_tol:
        issues.append(f"pi sums to {pi.sum()}, expected 1")
    for k in range(1, model.K + 1):
        Tk = T[k - 1]
        off = Tk - np.diag(np.diag(Tk))
        bad = np.argwhere(off < -structural_tol)
        for i, j in bad:
            issues.append(f"T[k={k}][{i},{j}] = {Tk[i, j]} negative off-diagonal")
        for i in np.nonzero(np.diag(Tk) > structural_tol)[0]:
            issues.append(f"T[k={k}][{i},{i}] = {Tk[i, i]} positive diagonal")
        rows = Tk.sum(axis=1)
        for i in np.nonzero(rows > structural_tol)[0]:
            issues.append(f"T[k={k}] row {i} sums to {rows[i]} > 0")
    if np.linalg.matrix_rank(T[-1]) < model.p:
        issues.append(f"T[k={model.K}] (last interval) is singular; absorption is not guaranteed")
    return issues


def save_model(model, path, theta=None):
    with open(path, "w") as fh:
        json.dump(model.to_dict(theta=theta), fh, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return IPHModel.from_dict(json.load(fh))
