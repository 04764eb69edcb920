"""Path-level simulation of the absorbing jump process and extraction of
complete-data sufficient statistics (initial counts, occurrences, local
exposures per grid interval).

Random numbers come from numpy's PCG64 generator; batch routines derive one
child seed per fixed-size chunk from ``SeedSequence(seed).spawn``, so output
is reproducible for a given seed regardless of how chunks are scheduled.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SimulationStall

_CHUNK = 1024
DEFAULT_EVENT_CAP = 10**6


@dataclass
class SamplePath:
    """One realization: 0-based states, absorbing state = p.

    ``events`` holds (time, from_state, to_state) in increasing time; the
    last event jumps to the absorbing state.
    """

    initial_state: int
    events: list = field(default_factory=list)

    @property
    def absorption_time(self):
        return self.events[-1][0]

    def check(self, p):
        times = [t for t, _, _ in self.events]
        if not self.events:
            raise DomainError("path has no events")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise DomainError("event times must be strictly increasing")
        if self.events[-1][2] != p:
            raise DomainError("path does not end in the absorbing state")


@dataclass
class SufficientStats:
    """Aggregated complete-data statistics.

    B[i]          weighted count of starts in state i
    O[k-1, i, j]  weighted i -> j jumps inside interval k (j = p absorbing)
    Eexp[k-1, i]  weighted time spent in state i inside interval k
    """

    B: np.ndarray
    O: np.ndarray
    Eexp: np.ndarray
    total_weight: float

    @classmethod
    def zeros(cls, p, K):
        return cls(np.zeros(p), np.zeros((K, p, p + 1)), np.zeros((K, p)), 0.0)

    @property
    def p(self):
        return self.B.size

    @property
    def K(self):
        return self.Eexp.shape[0]

    def flow_residuals(self):
        """Starts plus inflow minus outflow per state; zero for valid stats."""
        p = self.p
        inflow = self.O[:, :, :p].sum(axis=0).sum(axis=0)  # arrivals into each j
        outflow = self.O.sum(axis=(0, 2))
        return self.B + inflow - outflow

    def totals_residuals(self):
        """(sum B - W, sum absorptions - W)."""
        return (
            self.B.sum() - self.total_weight,
            self.O[:, :, self.p].sum() - self.total_weight,
        )


def _jump_tables(model):
    """Per (interval, state): total exit rate, cumulative target probabilities
    and target state ids (absorbing = p)."""
    p, K = model.p, model.K
    tvec = model.exit_vectors
    tables = []
    for k in range(K):
        per_state = []
        for i in range(p):
            rates = np.concatenate((model.T[k, i, :], [tvec[k, i]]))
            rates[i] = 0.0
            total = rates.sum()
            if total > 0.0:
                targets = np.nonzero(rates > 0.0)[0]
                cum = np.cumsum(rates[targets]) / total
            else:
                targets = np.empty(0, dtype=int)
                cum = np.empty(0)
            per_state.append((total, cum, targets))
        tables.append(per_state)
    return tables


def _walk(model, rng, tables, event_cap):
    p, K = model.p, model.K
    bp = model.grid.breakpoints
    state = int(rng.choice(p, p=model.pi)) if p > 1 else 0
    path = SamplePath(initial_state=state)
    t = 0.0
    k = 1
    steps = 0
    while True:
        steps += 1
        if steps > event_cap:
            raise SimulationStall(f"no absorption within {event_cap} events")
        total, cum, targets = tables[k - 1][state]
        if total <= 0.0:
            if k == K:
                raise SimulationStall(f"state {state} has no exits in the last interval")
            t = bp[k]
            k += 1
            continue
        hold = rng.exponential(1.0 / total)
        if k < K and t + hold > bp[k]:
            t = bp[k]
            k += 1
            continue
        t += hold
        j = int(targets[np.searchsorted(cum, rng.random(), side="right")])
        path.events.append((t, state, j))
        if j == p:
            return path
        state = j


def sample_path(model, seed, event_cap=DEFAULT_EVENT_CAP):
    """Simulate one path to absorption."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _walk(model, rng, _jump_tables(model), event_cap)


def iter_paths(model, n, seed, event_cap=DEFAULT_EVENT_CAP):
    """Yield n independent paths; chunked child seeds keep the stream
    reproducible and order-stable."""
    tables = _jump_tables(model)
    produced = 0
    chunk_index = 0
    while produced < n:
        child = np.random.SeedSequence(entropy=seed, spawn_key=(chunk_index,))
        rng = np.random.default_rng(child)
        chunk_index += 1
        for _ in range(min(_CHUNK, n - produced)):
            yield _walk(model, rng, tables, event_cap)
            produced += 1


def sample_paths(model, n, seed, event_cap=DEFAULT_EVENT_CAP):
    return list(iter_paths(model, n, seed, event_cap))


def sample_absorptions(model, n, seed, event_cap=DEFAULT_EVENT_CAP):
    """n independent absorption times as a float array."""
    return np.array([p.absorption_time for p in iter_paths(model, n, seed, event_cap)])


def _add_exposure(Eexp, bp, K, state, t0, t1, w):
    # time in `state` over (t0, t1], split across grid intervals
    k = int(np.searchsorted(bp, t0, side="right"))
    while True:
        hi = bp[k] if k < K else np.inf
        Eexp[k - 1, state] += w * (min(t1, hi) - max(t0, bp[k - 1]))
        if t1 <= hi:
            return
        k += 1


def path_statistics(paths, weights=None, *, p=None, grid=None):
    """Aggregate weighted paths into :class:`SufficientStats`.

    The state count p and the grid are inferred from the paths unless given;
    pass them explicitly when a batch might miss the highest state.
    """
    paths = list(paths)
    if weights is None:
        weights = np.ones(len(paths))
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise DomainError("path weights must be positive")
    if p is None:
        p = max(pth.events[-1][2] for pth in paths)
    if grid is None:
        raise DomainError("path_statistics needs the model grid")
    bp = grid.breakpoints
    K = grid.K

    stats = SufficientStats.zeros(p, K)
    for pth, w in zip(paths, weights):
        pth.check(p)
        stats.B[pth.initial_state] += w
        t_prev = 0.0
        for t, i, j in pth.events:
            _add_exposure(stats.Eexp, bp, K, i, t_prev, t, w)
            k = int(np.searchsorted(bp, t, side="left"))
            k = min(max(k, 1), K)
            stats.O[k - 1, i, j] += w
            t_prev = t
        stats.total_weight += w
    return stats
