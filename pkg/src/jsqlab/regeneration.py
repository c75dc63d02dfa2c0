"""Regenerative estimation of the stationary law of the JSQ diffusion.

For a level ``B > 0`` a cycle starts at ``(0, 2B)``, waits for Q2 to fall to
``B`` and ends when Q2 next climbs back to ``2B``. Cycles are i.i.d., so
stationary expectations are ratios of mean cycle integrals to mean cycle
length. Each cycle is simulated as an independent restart at ``(0, 2B)``
with its own derived random stream.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.optimize import isotonic_regression

from .diffusion import (
    DiffusionParams,
    DiffusionState,
    NumericalBlowUp,
    replication_rng,
    advance,
)
from .functionals import (
    Functional,
    Histogram,
    accumulate,
    accumulate_histograms,
    encode_functionals,
    encode_histograms,
    eval_functionals,
    tail_name,
)

_DONE, _TRUNC, _BLOWUP = 0, 1, 2


class InsufficientCycles(RuntimeError):
    """Fewer complete cycles than an estimator needs."""


def default_B(beta: float, m0: float = 0.5) -> float:
    """Regeneration level: ``1/beta`` for ``beta >= 1``, else ``2 m0 / beta``.

    Any ``B > 0`` gives the same stationary law; ``m0 = 0.5`` keeps small-beta
    cycles short (Q2 only has to climb from 1/beta to 2/beta).
    """
    return 1.0 / beta if beta >= 1.0 else 2.0 * m0 / beta


@dataclass(frozen=True)
class RegenConfig:
    B: float
    max_cycles: int = 1000
    max_time_per_cycle: float = 1e5
    functionals: tuple = ()
    histograms: tuple = ()

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if self.max_cycles < 2:
            raise ValueError("max_cycles must be at least 2")
        if not self.max_time_per_cycle > 0:
            raise ValueError("max_time_per_cycle must be positive")
        funcs = tuple(self.functionals)
        if not any(f.name == "one" for f in funcs):
            funcs = (Functional.const("one"),) + funcs
        names = [f.name for f in funcs]
        if len(set(names)) != len(names):
            raise ValueError("functional names must be unique")
        object.__setattr__(self, "functionals", funcs)
        object.__setattr__(self, "histograms", tuple(self.histograms))

    @property
    def functional_names(self) -> list[str]:
        return [f.name for f in self.functionals]


@dataclass
class Cycle:
    xi: float
    integrals: dict
    q2_max: float
    q1_min: float
    alpha1: float = math.nan
    local_time: float = 0.0
    truncated: bool = False
    histograms: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StationaryEstimate:
    value: float
    std_error: float
    n_cycles: int
    truncated_cycles: int = 0

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_cycles": self.n_cycles}


@numba.njit(cache=True)
def _cycle(beta, dt, floor, bridge, B, max_steps, spec, hcoords, hedges, hnbins, rng):
    nf = spec.shape[0]
    nh = hcoords.shape[0]
    integrals = np.zeros(nf)
    fprev = np.empty(nf)
    fnext = np.empty(nf)
    hists = np.zeros((hcoords.shape[0], hedges.shape[1] + 1))
    q1 = 0.0
    q2 = 2.0 * B
    l = 0.0
    eval_functionals(spec, q1, q2, beta, fprev)
    elapsed = 0.0
    alpha1 = -1.0
    phase = 0
    q2max = q2
    q1min = q1
    for _ in range(max_steps):
        nq1, nq2, nl, dl = advance(q1, q2, l, beta, dt, floor, bridge, rng)
        if not math.isfinite(nq1 + nq2 + nl):
            return _BLOWUP, elapsed, alpha1, integrals, hists, q2max, q1min, l
        if phase == 1 and nq2 >= 2.0 * B:
            theta = (2.0 * B - q2) / (nq2 - q2)
            w = theta * dt
            eq1 = q1 + theta * (nq1 - q1)
            eval_functionals(spec, eq1, 2.0 * B, beta, fnext)
            accumulate(spec, fprev, fnext, w, theta * dl, integrals)
            if nh > 0:
                accumulate_histograms(hcoords, hedges, hnbins, q1, q2, eq1, 2.0 * B, beta, w, hists)
            elapsed += w
            q2max = max(q2max, 2.0 * B)
            return _DONE, elapsed, alpha1, integrals, hists, q2max, q1min, l + theta * dl
        if phase == 0 and nq2 <= B:
            alpha1 = elapsed + (q2 - B) / (q2 - nq2) * dt
            phase = 1
        eval_functionals(spec, nq1, nq2, beta, fnext)
        accumulate(spec, fprev, fnext, dt, dl, integrals)
        if nh > 0:
            accumulate_histograms(hcoords, hedges, hnbins, q1, q2, nq1, nq2, beta, dt, hists)
        elapsed += dt
        q1, q2, l = nq1, nq2, nl
        q2max = max(q2max, q2)
        q1min = min(q1min, q1)
        fprev, fnext = fnext, fprev
    return _TRUNC, elapsed, alpha1, integrals, hists, q2max, q1min, l


def _run_indices(params: DiffusionParams, config: RegenConfig, indices) -> list[Cycle]:
    spec = encode_functionals(config.functionals)
    hc, he, hn = encode_histograms(config.histograms)
    max_steps = int(math.ceil(config.max_time_per_cycle / params.dt))
    names = config.functional_names
    out = []
    for i in indices:
        rng = replication_rng(params.seed, i)
        status, xi, a1, integ, hists, q2max, q1min, lt = _cycle(
            params.beta, params.dt, params.q2_floor, params.bridge, config.B, max_steps,
            spec, hc, he, hn, rng,
        )
        if status == _BLOWUP:
            raise NumericalBlowUp(f"cycle {i} diverged")
        out.append(
            Cycle(
                xi=float(xi),
                integrals=dict(zip(names, integ.tolist())),
                q2_max=float(q2max),
                q1_min=float(q1min),
                alpha1=float(a1) if a1 >= 0 else math.nan,
                local_time=float(lt),
                truncated=status == _TRUNC,
                histograms={
                    h.name: hists[j, : h.n_bins + 2].copy()
                    for j, h in enumerate(config.histograms)
                },
            )
        )
    return out


def run_cycles(
    params: DiffusionParams, config: RegenConfig, workers: int = 1
) -> list[Cycle]:
    """Simulate ``config.max_cycles`` independent cycles started at ``(0, 2B)``.

    Cycle ``i`` always uses the stream ``replication_rng(params.seed, i)``, so
    the result does not depend on ``workers``.
    """
    n = config.max_cycles
    if workers <= 1:
        cycles = _run_indices(params, config, range(n))
    else:
        chunks = [list(range(k, n, workers)) for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_indices, [params] * workers, [config] * workers, chunks))
        by_index = {}
        for chunk, part in zip(chunks, parts):
            by_index.update(zip(chunk, part))
        cycles = [by_index[i] for i in range(n)]
    complete = sum(not c.truncated for c in cycles)
    if complete < 2:
        raise InsufficientCycles(f"only {complete} complete cycles out of {n}")
    return cycles


def ratio_estimate(y, x, jackknife: bool = False) -> tuple[float, float]:
    """Ratio ``mean(y) / mean(x)`` and its delta-method (or jackknife) SE."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        raise InsufficientCycles("ratio estimation needs at least 2 cycles")
    xbar = x.mean()
    if not xbar > 1e-300:
        raise ValueError("degenerate denominator in ratio estimator")
    r = y.mean() / xbar
    if jackknife:
        loo = (y.sum() - y) / (x.sum() - x)
        se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    else:
        resid = y - r * x
        se = math.sqrt(np.sum(resid**2) / (n - 1) / n) / xbar
    return float(r), float(se)


def _complete(cycles: Sequence[Cycle]) -> list[Cycle]:
    return [c for c in cycles if not c.truncated]


def cycle_columns(cycles: Sequence[Cycle], names: Sequence[str]):
    """(xi, {name: per-cycle integrals}) over complete cycles."""
    done = _complete(cycles)
    for name in names:
        if done and name not in done[0].integrals:
            raise KeyError(f"functional {name!r} was not registered")
    xi = np.array([c.xi for c in done])
    cols = {name: np.array([c.integrals[name] for c in done]) for name in names}
    return xi, cols


def estimate_stationary(
    cycles: Sequence[Cycle], functional_name: str, jackknife: bool = False
) -> StationaryEstimate:
    xi, cols = cycle_columns(cycles, [functional_name])
    value, se = ratio_estimate(cols[functional_name], xi, jackknife)
    return StationaryEstimate(value, se, len(xi), len(cycles) - len(xi))


def estimate_combination(
    cycles: Sequence[Cycle], weights: dict, jackknife: bool = False
) -> StationaryEstimate:
    """Stationary mean of ``sum_k w_k f_k`` with a joint delta-method SE."""
    xi, cols = cycle_columns(cycles, list(weights))
    y = sum(w * cols[name] for name, w in weights.items())
    value, se = ratio_estimate(y, xi, jackknife)
    return StationaryEstimate(value, se, len(xi), len(cycles) - len(xi))


def stationary_histogram(cycles: Sequence[Cycle], name: str) -> np.ndarray:
    """Stationary mass per slot (underflow, bins..., overflow)."""
    done = _complete(cycles)
    total = np.sum([c.histograms[name] for c in done], axis=0)
    return total / sum(c.xi for c in done)


@dataclass(frozen=True)
class TailPoint:
    level: float
    raw: StationaryEstimate
    corrected: float


def tail_functionals(coordinate: str, levels: Sequence[float]) -> list[Functional]:
    """Indicator functionals that :func:`tail_curve` expects to find."""
    if coordinate == "q1_below":
        return [Functional.q1_below(x) for x in levels]
    if coordinate == "q2_above":
        return [Functional.q2_above(y) for y in levels]
    raise ValueError("coordinate must be 'q1_below' or 'q2_above'")


def tail_curve(
    cycles: Sequence[Cycle], coordinate: str, levels: Sequence[float]
) -> list[TailPoint]:
    """Stationary ``P(Q1 <= -x)`` or ``P(Q2 >= y)`` on ``levels``.

    The raw estimates are returned alongside an isotonic (nonincreasing)
    correction weighted by inverse variance.
    """
    if coordinate not in ("q1_below", "q2_above"):
        raise ValueError("coordinate must be 'q1_below' or 'q2_above'")
    levels = [float(v) for v in levels]
    if levels != sorted(levels):
        raise ValueError("levels must be sorted")
    raw = [estimate_stationary(cycles, tail_name(coordinate, v)) for v in levels]
    vals = np.array([e.value for e in raw])
    if len(levels) > 1:
        se = np.array([e.std_error for e in raw])
        w = 1.0 / np.maximum(se, 1e-12) ** 2
        corrected = isotonic_regression(vals, weights=w, increasing=False).x
    else:
        corrected = vals
    return [TailPoint(v, e, float(c)) for v, e, c in zip(levels, raw, corrected)]


@numba.njit(cache=True)
def _path_batches(q1, q2, l, beta, dt, floor, bridge, n_burn, n_batches, per_batch,
                  spec, hcoords, hedges, hnbins, rng):
    nf = spec.shape[0]
    nh = hcoords.shape[0]
    batches = np.zeros((n_batches, nf))
    hists = np.zeros((hcoords.shape[0], hedges.shape[1] + 1))
    fprev = np.empty(nf)
    fnext = np.empty(nf)
    for _ in range(n_burn):
        q1, q2, l, dl = advance(q1, q2, l, beta, dt, floor, bridge, rng)
    if not math.isfinite(q1 + q2 + l):
        return _BLOWUP, batches, hists, q1, q2, l
    eval_functionals(spec, q1, q2, beta, fprev)
    for b in range(n_batches):
        row = batches[b]
        for _ in range(per_batch):
            nq1, nq2, nl, dl = advance(q1, q2, l, beta, dt, floor, bridge, rng)
            eval_functionals(spec, nq1, nq2, beta, fnext)
            accumulate(spec, fprev, fnext, dt, dl, row)
            if nh > 0:
                accumulate_histograms(hcoords, hedges, hnbins, q1, q2, nq1, nq2, beta, dt, hists)
            q1, q2, l = nq1, nq2, nl
            fprev, fnext = fnext, fprev
        if not math.isfinite(q1 + q2 + l):
            return _BLOWUP, batches, hists, q1, q2, l
    return _DONE, batches, hists, q1, q2, l


@dataclass
class PathAverages:
    estimates: dict
    histograms: dict
    batch_length: float
    final: DiffusionState


def time_average_run(
    params: DiffusionParams,
    functionals: Sequence[Functional],
    horizon: float,
    burn_in: float,
    n_batches: int = 32,
    initial: Optional[DiffusionState] = None,
    histograms: Sequence[Histogram] = (),
    rng: Optional[np.random.Generator] = None,
) -> PathAverages:
    """Single long path; batch-means SEs for every functional."""
    if not horizon > burn_in:
        raise ValueError("horizon must exceed burn_in")
    if n_batches < 2:
        raise ValueError("need at least 2 batches")
    per_batch = int((horizon - burn_in) / params.dt) // n_batches
    if per_batch < 1:
        raise ValueError("horizon too short for the requested batches")
    if initial is None:
        initial = DiffusionState(0.0, 0.0, 2.0 * default_B(params.beta))
    rng = params.rng() if rng is None else rng
    spec = encode_functionals(functionals)
    hc, he, hn = encode_histograms(histograms)
    status, batches, hists, q1, q2, l = _path_batches(
        initial.q1, initial.q2, initial.l, params.beta, params.dt, params.q2_floor,
        params.bridge, int(burn_in / params.dt), n_batches, per_batch, spec, hc, he, hn, rng,
    )
    if status == _BLOWUP:
        raise NumericalBlowUp("trajectory diverged")
    length = per_batch * params.dt
    means = batches / length
    est = {}
    for j, f in enumerate(functionals):
        m = means[:, j]
        est[f.name] = StationaryEstimate(
            float(m.mean()), float(m.std(ddof=1) / math.sqrt(n_batches)), n_batches
        )
    total = length * n_batches
    hist_out = {h.name: hists[j, : h.n_bins + 2] / total for j, h in enumerate(histograms)}
    t_end = initial.t + (int(burn_in / params.dt) + per_batch * n_batches) * params.dt
    return PathAverages(est, hist_out, length, DiffusionState(t_end, q1, q2, l))


def time_average_estimate(
    params: DiffusionParams,
    functional: Functional,
    horizon: float,
    burn_in: float,
    n_batches: int = 32,
    initial: Optional[DiffusionState] = None,
) -> StationaryEstimate:
    run = time_average_run(params, [functional], horizon, burn_in, n_batches, initial)
    return run.estimates[functional.name]
