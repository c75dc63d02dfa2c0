"""Pre-limit N-server join-the-shortest-queue chain in occupancy coordinates.

``q[i]`` (1-based) counts servers holding at least ``i`` jobs. An arrival
joins a shortest queue; since every shortest queue has the same length, the
choice among tied servers leaves the occupancy vector unchanged, so no
tie-breaking rule is needed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .diffusion import NumericalBlowUp, replication_rng
from .functionals import bin_slot

MAX_LEVEL = 64


class LevelOverflow(RuntimeError):
    """A queue grew past the tracked maximum level."""


@dataclass(frozen=True)
class CtmcParams:
    n_servers: int
    beta: float
    seed: int = 0

    def __post_init__(self):
        if self.n_servers < 1:
            raise ValueError("n_servers must be >= 1")
        if not (0.0 < self.lam < self.n_servers):
            raise ValueError("need 0 < beta < sqrt(N) so that 0 < lambda < N")

    @property
    def lam(self) -> float:
        return self.n_servers - self.beta * math.sqrt(self.n_servers)


@dataclass(frozen=True)
class OccupancyState:
    """Occupancy vector ``(Q1, Q2, ...)`` with trailing zeros trimmed."""

    q: tuple
    n_servers: int
    t: float = 0.0

    def __post_init__(self):
        q = [int(v) for v in self.q]
        while q and q[-1] == 0:
            q.pop()
        prev = self.n_servers
        for v in q:
            if v < 0 or v > prev:
                raise ValueError("occupancy must be nonincreasing within [0, N]")
            prev = v
        object.__setattr__(self, "q", tuple(q))

    def level(self, i: int) -> int:
        """``q[i]`` for ``i >= 1`` and ``N`` for ``i = 0``."""
        if i == 0:
            return self.n_servers
        return self.q[i - 1] if i <= len(self.q) else 0


def arrival_update(state: OccupancyState) -> OccupancyState:
    """Route one arrival to a shortest queue."""
    q = list(state.q) + [0]
    i = 0
    while q[i] >= state.level(i):
        i += 1
    q[i] += 1
    return OccupancyState(tuple(q), state.n_servers, state.t)


def departure_weights(state: OccupancyState) -> list[int]:
    """Servers with exactly ``i`` jobs, for ``i = 1..len(q)``."""
    return [state.level(i) - state.level(i + 1) for i in range(1, len(state.q) + 1)]


def departure_update(state: OccupancyState, rng: np.random.Generator) -> OccupancyState:
    """Complete service at a uniformly chosen busy server."""
    if not state.q:
        raise ValueError("no busy server to depart from")
    k = int(rng.random() * state.q[0])
    i = len(state.q)
    while k >= state.q[i - 1]:
        i -= 1
    # level(i + 1) <= k < level(i): the chosen server holds exactly i jobs
    q = list(state.q)
    q[i - 1] -= 1
    return OccupancyState(tuple(q), state.n_servers, state.t)


@dataclass(frozen=True)
class ScaledOccupancy:
    qbar1: float
    qbar: tuple = field(default_factory=tuple)


def scale(state: OccupancyState) -> ScaledOccupancy:
    root = math.sqrt(state.n_servers)
    qbar1 = -(state.n_servers - state.level(1)) / root
    return ScaledOccupancy(qbar1, tuple(v / root for v in state.q[1:]))


@numba.njit(cache=True)
def _gillespie(n, lam, q, horizon, burn_in, n_batches, n_levels, hedges, hnbins, rng):
    """Event loop; q is a dense int array with q[0] = N padding."""
    root = math.sqrt(n)
    batch_len = (horizon - burn_in) / n_batches
    means = np.zeros((n_batches, n_levels))
    hists = np.zeros((2, hedges.shape[1] + 1))
    t = 0.0
    top = 0
    while top + 1 < q.shape[0] and q[top + 1] > 0:
        top += 1
    while t < horizon:
        rate = lam + q[1]
        t_next = t + rng.exponential() / rate
        # time-weight the current state over [t, t_next) clipped to the window
        a = max(t, burn_in)
        b = min(t_next, horizon)
        while a < b:
            k = min(int((a - burn_in) / batch_len), n_batches - 1)
            while k < n_batches - 1 and burn_in + (k + 1) * batch_len <= a:
                k += 1
            end = b if k == n_batches - 1 else min(b, burn_in + (k + 1) * batch_len)
            w = end - a
            for i in range(1, min(top, n_levels) + 1):
                means[k, i - 1] += q[i] * w
            v1 = -(n - q[1]) / root
            v2 = q[2] / root
            for j in range(2):
                v = v1 if j == 0 else v2
                s = bin_slot(hedges, j, hnbins[j], v)
                hists[j, s] += w
            a = end
        t = t_next
        if t >= horizon:
            break
        if rng.random() * rate < lam:
            i = 0
            while q[i + 1] >= q[i]:
                i += 1
            if i + 1 >= q.shape[0] - 1:
                return means, hists, -1
            q[i + 1] += 1
            if i + 1 > top:
                top = i + 1
        else:
            k = int(rng.random() * q[1])
            i = top
            while k >= q[i]:
                i -= 1
            q[i] -= 1
            if q[top] == 0:
                top -= 1
    return means / batch_len, hists, 0


@dataclass(frozen=True)
class CtmcAverages:
    """Batch-means summary of one long CTMC path."""

    level_means: np.ndarray  # time average of q[i], i = 1..n_levels
    level_se: np.ndarray
    batches: np.ndarray
    histograms: dict
    edges: dict

    def scaled_means(self, n_servers: int) -> tuple[float, float]:
        root = math.sqrt(n_servers)
        qbar1 = -(n_servers - self.level_means[0]) / root
        qbar2 = self.level_means[1] / root if self.level_means.size > 1 else 0.0
        return qbar1, qbar2

    def scaled_se(self, n_servers: int) -> tuple[float, float]:
        root = math.sqrt(n_servers)
        return self.level_se[0] / root, self.level_se[1] / root


DEFAULT_EDGES = {
    "qbar1": tuple(np.linspace(-5.0, 0.0, 101)),
    "qbar2": tuple(np.linspace(0.0, 5.0, 101)),
}


def gillespie_run(
    params: CtmcParams,
    horizon: float,
    burn_in: Optional[float] = None,
    n_batches: int = 32,
    n_levels: int = 8,
    initial: Optional[Sequence[int]] = None,
    edges: Optional[dict] = None,
    rng: Optional[np.random.Generator] = None,
) -> CtmcAverages:
    """Time-weighted statistics of the occupancy chain after ``burn_in``.

    Holding times are exponential with rate ``lambda + q[1]``. Starts from
    ``initial`` (default: all servers busy, nobody waiting) and defaults
    ``burn_in`` to ``10 sqrt(N)``.
    """
    n = params.n_servers
    burn_in = 10.0 * math.sqrt(n) if burn_in is None else float(burn_in)
    if not (horizon > burn_in >= 0.0):
        raise ValueError("need horizon > burn_in >= 0")
    if n_batches < 2:
        raise ValueError("n_batches must be >= 2")
    start = OccupancyState(tuple(initial) if initial is not None else (n,), n)
    q = np.zeros(MAX_LEVEL + 2, dtype=np.int64)
    q[0] = n
    q[1 : len(start.q) + 1] = start.q
    edges = dict(DEFAULT_EDGES if edges is None else edges)
    e1 = np.asarray(edges["qbar1"], float)
    e2 = np.asarray(edges["qbar2"], float)
    width = max(e1.size, e2.size)
    hedges = np.full((2, width), np.nan)
    hedges[0, : e1.size] = e1
    hedges[1, : e2.size] = e2
    hnbins = np.array([e1.size - 1, e2.size - 1], dtype=np.int64)
    rng = replication_rng(params.seed, 0) if rng is None else rng
    means, hists, status = _gillespie(
        n, params.lam, q, float(horizon), burn_in, int(n_batches), int(n_levels),
        hedges, hnbins, rng,
    )
    if status < 0:
        raise LevelOverflow(f"queue length exceeded {MAX_LEVEL}")
    if not np.all(np.isfinite(means)):
        raise NumericalBlowUp("non-finite CTMC accumulation")
    window = horizon - burn_in
    mean = means.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return CtmcAverages(
        mean,
        se,
        means,
        {
            "qbar1": hists[0, : e1.size + 1] / window,
            "qbar2": hists[1, : e2.size + 1] / window,
        },
        {"qbar1": e1, "qbar2": e2},
    )


def simulate_servers(n: int, lam: float, horizon: float, rng: np.random.Generator,
                     tie_break: str = "first") -> list[tuple[float, tuple]]:
    """Reference server-level JSQ simulation for small ``n``.

    Returns the embedded sequence of ``(time, occupancy)`` pairs. Used only
    to check the occupancy dynamics, so it favours clarity over speed.
    """
    lengths = [0] * n
    t = 0.0
    out = []
    while t < horizon:
        busy = sum(1 for v in lengths if v > 0)
        rate = lam + busy
        t += rng.exponential() / rate
        if rng.random() * rate < lam:
            shortest = min(lengths)
            ties = [j for j, v in enumerate(lengths) if v == shortest]
            j = ties[0] if tie_break == "first" else ties[int(rng.integers(len(ties)))]
            lengths[j] += 1
        else:
            busy_ids = [j for j, v in enumerate(lengths) if v > 0]
            lengths[busy_ids[int(rng.integers(len(busy_ids)))]] -= 1
        top = max(lengths)
        occ = tuple(sum(1 for v in lengths if v >= i) for i in range(1, top + 1))
        out.append((t, occ))
    return out
