"""Reflected JSQ diffusion in the Halfin-Whitt regime.

The process lives on ``(-inf, 0] x (0, inf)``::

    dQ1 = sqrt(2) dW + (-beta - Q1 + Q2) dt - dL
    dQ2 = dL - Q2 dt

where L only increases while Q1 = 0. We integrate it with explicit Euler for
the drift and a one-step Skorokhod map for the reflection: whatever the
free Q1 path would have pushed above zero during the step is credited to the
local time, which feeds Q2 directly. Either way the discrete analogue of
``d(Q1 + Q2) = sqrt(2) dW - beta dt - Q1 dt`` holds exactly.

Two reflection schemes are available. ``projection`` clips the free
endpoint at 0. ``bridge`` (the default) samples the maximum of the Brownian
bridge between the free endpoints, which is what the Skorokhod map needs;
projection underestimates the local time by O(sqrt(dt)) and visibly biases
Q2 when Q2 is large (boundary layer of width ~1/Q2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

Q2_FLOOR = 1e-300

# kernel status codes
_RUNNING, _HIT, _TRUNCATED, _BLOWUP = 0, 1, 2, 3


class NumericalBlowUp(ArithmeticError):
    """Raised when a trajectory produces a non-finite value."""


def default_dt(beta: float) -> float:
    """Step size ``min(1e-3, 1e-2 / max(beta, 1/beta))``."""
    return min(1e-3, 1e-2 / max(beta, 1.0 / beta))


def replication_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replication ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class DiffusionParams:
    beta: float
    dt: Optional[float] = None
    q2_floor: float = Q2_FLOOR
    seed: int = 0
    scheme: str = "bridge"

    def __post_init__(self):
        if self.scheme not in ("bridge", "projection"):
            raise ValueError("scheme must be 'bridge' or 'projection'")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be positive and finite")
        if self.dt is None:
            object.__setattr__(self, "dt", default_dt(self.beta))
        if not 0 < self.dt < 1:
            raise ValueError("dt must lie in (0, 1)")
        if not 0 < self.q2_floor < 1:
            raise ValueError("q2_floor must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def bridge(self) -> bool:
        return self.scheme == "bridge"

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class DiffusionState:
    t: float = 0.0
    q1: float = 0.0
    q2: float = 1.0
    l: float = 0.0

    def __post_init__(self):
        vals = (self.t, self.q1, self.q2, self.l)
        if not all(math.isfinite(v) for v in vals):
            raise NumericalBlowUp(f"non-finite diffusion state {vals}")
        if self.t < 0 or self.q1 > 0 or self.q2 <= 0 or self.l < 0:
            raise ValueError(f"invalid diffusion state {vals}")

    @property
    def s(self) -> float:
        return self.q1 + self.q2


@dataclass(frozen=True)
class HittingResult:
    hit: bool
    time: float
    state_at_hit: DiffusionState
    truncated_at: Optional[float] = None


def drift(q1: float, q2: float, beta: float) -> tuple[float, float]:
    """Drift of (Q1, Q2) away from the boundary."""
    return -beta - q1 + q2, -q2


@numba.njit(cache=True, inline="always")
def step_core(q1, q2, l, beta, dt, floor, z, v, bridge):
    """One Euler step with reflection at 0; returns (q1, q2, l, dL).

    ``z`` is the standard normal increment and ``v`` a uniform on [0, 1).
    With ``bridge`` false the free endpoint is projected onto (-inf, 0] and
    the overshoot is the local time (``v`` unused). With ``bridge`` true the
    maximum of the Brownian bridge between the two endpoints is sampled from
    ``v`` and the local time is that maximum's positive part, which removes
    the O(sqrt(dt)) boundary bias of plain projection.
    """
    u = q1 + (-beta - q1 + q2) * dt + math.sqrt(2.0 * dt) * z
    if bridge:
        m = 0.5 * (q1 + u + math.sqrt((u - q1) ** 2 - 4.0 * dt * math.log1p(-v)))
        dl = m if m > 0.0 else 0.0
        q1n = u - dl
        if q1n > 0.0:  # rounding when the bridge maximum equals the endpoint
            q1n = 0.0
    elif u > 0.0:
        dl = u
        q1n = 0.0
    else:
        dl = 0.0
        q1n = u
    q2n = q2 * (1.0 - dt) + dl
    if q2n < floor:
        q2n = floor
    return q1n, q2n, l + dl, dl


@numba.njit(cache=True, inline="always")
def advance(q1, q2, l, beta, dt, floor, bridge, rng):
    """Draw the step's random inputs (normal, then uniform if bridging) and step."""
    z = rng.standard_normal()
    v = rng.random() if bridge else 0.5
    return step_core(q1, q2, l, beta, dt, floor, z, v, bridge)


def step(
    state: DiffusionState, params: DiffusionParams, z: float, v: float = 0.5
) -> DiffusionState:
    """Advance one step given the normal draw ``z`` (and bridge uniform ``v``)."""
    if not (math.isfinite(z) and 0.0 <= v < 1.0):
        raise NumericalBlowUp(f"invalid random inputs z={z}, v={v}")
    q1, q2, l, _ = step_core(
        state.q1, state.q2, state.l, params.beta, params.dt, params.q2_floor,
        z, v, params.bridge,
    )
    return DiffusionState(state.t + params.dt, q1, q2, l)


def draw(rng: np.random.Generator, params: DiffusionParams) -> tuple[float, float]:
    """Random inputs of one step, in the order the compiled kernels use."""
    z = rng.standard_normal()
    return z, (rng.random() if params.bridge else 0.5)


def simulate_until(
    state: DiffusionState,
    params: DiffusionParams,
    stop: Callable[[DiffusionState], bool],
    max_time: float,
    observers: Sequence[Callable[[DiffusionState], float]] = (),
    rng: Optional[np.random.Generator] = None,
):
    """Step until ``stop(state)`` holds or ``state.t >= max_time``.

    Returns ``(final_state, stopped, totals)`` where ``totals`` holds the
    trapezoid-rule time integrals of each observer along the path. This is
    the flexible (slow) path; the estimators use compiled kernels that draw
    from the same stream and agree with it step for step.
    """
    if not max_time > state.t:
        raise ValueError("max_time must exceed the current time")
    rng = params.rng() if rng is None else rng
    totals = np.zeros(len(observers))
    if stop(state):
        return state, True, totals
    prev = np.array([f(state) for f in observers], dtype=float)
    while state.t < max_time:
        state = step(state, params, *draw(rng, params))
        cur = np.array([f(state) for f in observers], dtype=float)
        totals += 0.5 * (prev + cur) * params.dt
        prev = cur
        if stop(state):
            return state, True, totals
    return state, False, totals


@numba.njit(cache=True)
def _record_path(q1, q2, l, beta, dt, floor, bridge, n_steps, stride, rng):
    n_rec = n_steps // stride + 1
    out = np.empty((n_rec, 4))
    out[0, 0] = 0.0
    out[0, 1] = q1
    out[0, 2] = q2
    out[0, 3] = l
    k = 1
    for i in range(1, n_steps + 1):
        q1, q2, l, dl = advance(q1, q2, l, beta, dt, floor, bridge, rng)
        if not math.isfinite(q1 + q2 + l):
            return out[:k], _BLOWUP
        if i % stride == 0:
            out[k, 0] = i * dt
            out[k, 1] = q1
            out[k, 2] = q2
            out[k, 3] = l
            k += 1
    return out[:k], _TRUNCATED


def record_path(
    state: DiffusionState,
    params: DiffusionParams,
    duration: float,
    stride: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Array of rows ``(t, q1, q2, l)`` sampled every ``stride`` steps."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rng = params.rng() if rng is None else rng
    n_steps = int(math.ceil(duration / params.dt - 1e-9))
    out, status = _record_path(
        state.q1, state.q2, state.l, params.beta, params.dt, params.q2_floor,
        params.bridge, n_steps, stride, rng,
    )
    if status == _BLOWUP:
        raise NumericalBlowUp("trajectory diverged")
    out[:, 0] += state.t
    return out


@numba.njit(cache=True)
def _hit(q1, q2, l, beta, dt, floor, bridge, coord, level, max_steps, rng):
    """Run until coordinate ``coord`` (1 or 2) crosses ``level``.

    Returns (status, steps, theta, q1, q2, l, pq1, pq2, pl) with the
    post-step state and the state before the bracketing step.
    """
    v = q1 if coord == 1 else q2
    if v == level:
        return _HIT, 0, 0.0, q1, q2, l, q1, q2, l
    side = 1.0 if v > level else -1.0
    for i in range(1, max_steps + 1):
        pq1, pq2, pl = q1, q2, l
        q1, q2, l, dl = advance(q1, q2, l, beta, dt, floor, bridge, rng)
        if not math.isfinite(q1 + q2 + l):
            return _BLOWUP, i, 0.0, q1, q2, l, pq1, pq2, pl
        v = q1 if coord == 1 else q2
        if coord == 1 and dl > 0.0:
            # the path touched 0 inside the step (bridge endpoints stay below 0)
            v = 0.0
        if (v - level) * side <= 0.0:
            vp = pq1 if coord == 1 else pq2
            theta = (vp - level) / (vp - v)
            return _HIT, i, theta, q1, q2, l, pq1, pq2, pl
    return _TRUNCATED, max_steps, 0.0, q1, q2, l, q1, q2, l


def _hitting_time(state, params, coord, level, max_time, rng):
    if not (math.isfinite(level) and math.isfinite(max_time)):
        raise ValueError("level and max_time must be finite")
    if not max_time > 0:
        raise ValueError("max_time must be positive")
    rng = params.rng() if rng is None else rng
    max_steps = int(math.ceil(max_time / params.dt - 1e-9))
    status, n, theta, q1, q2, l, pq1, pq2, pl = _hit(
        state.q1, state.q2, state.l, params.beta, params.dt, params.q2_floor,
        params.bridge, coord, float(level), max_steps, rng,
    )
    if status == _BLOWUP:
        raise NumericalBlowUp("trajectory diverged")
    if status == _TRUNCATED:
        end = DiffusionState(state.t + n * params.dt, q1, q2, l)
        return HittingResult(False, n * params.dt, end, truncated_at=max_time)
    elapsed = (n - 1 + theta) * params.dt if n else 0.0
    hq1 = min(pq1 + theta * (q1 - pq1), 0.0)
    hq2 = max(pq2 + theta * (q2 - pq2), params.q2_floor)
    if n:
        # the crossed coordinate sits on the level by construction
        hq1, hq2 = (level, hq2) if coord == 1 else (hq1, level)
    at = DiffusionState(state.t + elapsed, hq1, hq2, pl + theta * (l - pl))
    return HittingResult(True, min(elapsed, max_time), at)


def hitting_time_q1(
    state: DiffusionState,
    params: DiffusionParams,
    level: float,
    max_time: float,
    rng: Optional[np.random.Generator] = None,
) -> HittingResult:
    """First time (elapsed from ``state``) at which Q1 reaches ``level <= 0``."""
    if level > 0:
        raise ValueError("Q1 levels must be nonpositive")
    return _hitting_time(state, params, 1, level, max_time, rng)


def hitting_time_q2(
    state: DiffusionState,
    params: DiffusionParams,
    level: float,
    max_time: float,
    rng: Optional[np.random.Generator] = None,
) -> HittingResult:
    """First time (elapsed from ``state``) at which Q2 reaches ``level > 0``."""
    if not level > 0:
        raise ValueError("Q2 levels must be positive")
    return _hitting_time(state, params, 2, level, max_time, rng)


@numba.njit(cache=True)
def _free_exit_batch(n_reps, x0, lower, upper, beta, kappa, dt, max_steps, rng):
    """Unreflected ``dX = (-beta - kappa X) dt + sqrt(2) dW`` with Q2 frozen at 0.

    Per replication returns +1 (upper hit), -1 (lower hit) or 0 (neither
    within ``max_steps``) and the step count.
    """
    outcome = np.zeros(n_reps, dtype=np.int64)
    steps = np.zeros(n_reps, dtype=np.int64)
    sd = math.sqrt(2.0 * dt)
    for r in range(n_reps):
        x = x0
        for i in range(1, max_steps + 1):
            x = x + (-beta - kappa * x) * dt + sd * rng.standard_normal()
            if x >= upper:
                outcome[r] = 1
                steps[r] = i
                break
            if x <= lower:
                outcome[r] = -1
                steps[r] = i
                break
        else:
            steps[r] = max_steps
    return outcome, steps


def free_exit(
    n_reps: int,
    x0: float,
    lower: float,
    upper: float,
    beta: float,
    dt: float,
    max_time: float,
    kappa: float = 0.0,
    rng: Optional[np.random.Generator] = None,
):
    """Calibration harness: the Q1 integrator with reflection off and Q2 = 0.

    With ``kappa = 0`` this is ``sqrt(2) W - beta t``; with ``kappa = 1``
    and ``beta = 0`` it is the OU process ``dX = -X dt + sqrt(2) dW``.
    Returns ``(outcome, times)`` arrays.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    max_steps = int(math.ceil(max_time / dt - 1e-9))
    outcome, steps = _free_exit_batch(
        int(n_reps), float(x0), float(lower), float(upper), float(beta),
        float(kappa), float(dt), max_steps, rng,
    )
    return outcome, steps * dt


@dataclass
class TrajectoryManifest:
    params: DiffusionParams
    initial: DiffusionState
    duration: float
    stride: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "beta": self.params.beta,
            "dt": self.params.dt,
            "q2_floor": self.params.q2_floor,
            "seed": int(self.params.seed),
            "initial": {"t": self.initial.t, "q1": self.initial.q1,
                        "q2": self.initial.q2, "l": self.initial.l},
            "duration": self.duration,
            "stride": self.stride,
            **self.extra,
        }
