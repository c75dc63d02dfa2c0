"""Time-weighted empirical distributions, KS distances, tail fits and the
exact stationary moment identities used as residual checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .functionals import Functional
from .regeneration import Cycle, StationaryEstimate, estimate_combination


@dataclass(frozen=True)
class WeightedSample:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("empty sample")
        if v.shape != w.shape:
            raise ValueError("values and weights must have equal length")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, values, weight: float = 1.0) -> "WeightedSample":
        v = np.asarray(values, dtype=float)
        return cls(v, np.full(v.shape, weight))


class WeightedCDF:
    """Right-continuous step CDF of a :class:`WeightedSample`."""

    def __init__(self, sample: WeightedSample):
        order = np.argsort(sample.values, kind="stable")
        v = sample.values[order]
        w = sample.weights[order]
        self.points, start = np.unique(v, return_index=True)
        mass = np.add.reduceat(w, start)
        self.cum = np.cumsum(mass) / w.sum()
        self.cum[-1] = 1.0

    def __call__(self, x):
        idx = np.searchsorted(self.points, np.asarray(x, dtype=float), side="right")
        out = np.where(idx > 0, self.cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    def left_limits(self) -> np.ndarray:
        return np.concatenate(([0.0], self.cum[:-1]))


def weighted_cdf(sample: WeightedSample) -> WeightedCDF:
    return WeightedCDF(sample)


def ks_distance(sample: WeightedSample, reference_cdf: Callable) -> float:
    """sup |F_emp - F_ref|, checked on both sides of every jump."""
    cdf = weighted_cdf(sample)
    ref = np.asarray(reference_cdf(cdf.points), dtype=float)
    d = max(np.max(np.abs(cdf.cum - ref)), np.max(np.abs(cdf.left_limits() - ref)))
    return float(min(max(d, 0.0), 1.0))


def ks_distance_binned(edges, masses, reference_cdf: Callable) -> float:
    """KS distance of a binned distribution, evaluated at the bin edges.

    ``masses`` holds ``len(edges) + 1`` slots: underflow, bins, overflow.
    """
    edges = np.asarray(edges, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if masses.size != edges.size + 1:
        raise ValueError("expected underflow, bins and overflow masses")
    emp = np.cumsum(masses[:-1]) / masses.sum()
    ref = np.asarray(reference_cdf(edges), dtype=float)
    return float(np.max(np.abs(emp - ref)))


def binned_quantile(edges, masses, q: float) -> float:
    """Quantile of a binned distribution, linear within the bin."""
    edges = np.asarray(edges, dtype=float)
    masses = np.asarray(masses, dtype=float) / np.sum(masses)
    cum = np.cumsum(masses[:-1])
    if q <= cum[0]:
        return float(edges[0])
    k = int(np.searchsorted(cum, q))
    if k >= edges.size:
        return float(edges[-1])
    lo, hi = cum[k - 1], cum[k]
    frac = 0.0 if hi == lo else (q - lo) / (hi - lo)
    return float(edges[k - 1] + frac * (edges[k] - edges[k - 1]))


@dataclass(frozen=True)
class TailFit:
    slope: float
    intercept: float
    r_squared: float


def tail_slope(levels, log_probs) -> TailFit:
    """Least-squares line through ``(level, log P)``; slope is the decay rate."""
    x = np.asarray(levels, dtype=float)
    y = np.asarray(log_probs, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < 3:
        raise ValueError("tail_slope needs at least 3 finite points")
    fit = sps.linregress(x, y)
    return TailFit(-float(fit.slope), float(fit.intercept), float(fit.rvalue**2))


def histogram(sample: WeightedSample, bins: int, range_=None):
    """Time-weighted histogram as ``(bin_left, bin_right, mass)`` rows.

    Bins are half-open ``[left, right)`` except the last, so a point on an
    interior edge counts toward the bin on its right.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = (sample.values.min(), sample.values.max()) if range_ is None else range_
    if hi <= lo:
        return [(float(lo), float(hi), 1.0)]
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, sample.values, side="right") - 1, 0, bins - 1)
    inside = (sample.values >= lo) & (sample.values <= hi)
    mass = np.bincount(idx[inside], weights=sample.weights[inside], minlength=bins)
    mass = mass / sample.weights.sum()
    return [(float(edges[k]), float(edges[k + 1]), float(mass[k])) for k in range(bins)]


@dataclass(frozen=True)
class IdentityReport:
    name: str
    n: int
    lhs: StationaryEstimate
    rhs: StationaryEstimate
    z_score: float
    paired_z: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "z": self.z_score,
            "paired_z": self.paired_z,
        }


def _q2(k: int) -> str:
    return "one" if k == 0 else f"q2^{k}"


def _a(k: int) -> str:
    return "one" if k == 0 else f"(q1+beta)^{k}"


def identity_functionals(beta: float, n_max: int) -> list[Functional]:
    """Every functional :func:`identity_checks` reads, for ``n <= n_max``."""
    fs = {}
    for k in range(1, n_max + 2):
        fs[_q2(k)] = Functional.monomial(_q2(k), 0, k)
    for n in range(n_max + 1):
        fs[f"q1*q2^{n}"] = Functional.monomial(f"q1*q2^{n}", 1, n)
        fs[f"q1^2*q2^{n}"] = Functional.monomial(f"q1^2*q2^{n}", 2, n)
        fs[f"L*q2^{n}"] = Functional.local_time(f"L*q2^{n}", n)
    for k in range(1, n_max + 1):
        fs[_a(k)] = Functional.monomial(_a(k), k, 0, beta)
    for k in range(n_max):
        fs[f"(q1+beta)^{k}*q2"] = Functional.monomial(f"(q1+beta)^{k}*q2", k, 1, beta)
    return list(fs.values())


def _merge(*terms) -> dict:
    out: dict = {}
    for name, w in terms:
        out[name] = out.get(name, 0.0) + w
    return out


def _report(cycles, name, n, lhs_w, rhs_w) -> IdentityReport:
    lhs = estimate_combination(cycles, lhs_w)
    rhs = estimate_combination(cycles, rhs_w)
    denom = math.hypot(lhs.std_error, rhs.std_error)
    diff = lhs.value - rhs.value
    z = diff / denom if denom > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
    paired = estimate_combination(
        cycles, _merge(*lhs_w.items(), *((k, -w) for k, w in rhs_w.items()))
    )
    pz = paired.value / paired.std_error if paired.std_error > 0 else 0.0
    return IdentityReport(name, n, lhs, rhs, float(z), float(pz))


def identity_checks(cycles: Sequence[Cycle], beta: float, n_max: int) -> list[IdentityReport]:
    """Residual checks of identities that hold exactly under the stationary law.

    For each ``n``:

    * ``local_time_rate``: rate of ``int Q2^n dL`` equals ``E[Q2^{n+1}]``
      (``n = 0``: ``E[L(t)]/t = E[Q2]``);
    * ``q1_q2n``: ``E[Q1 Q2^n] = -beta/(n+1) E[Q2^n]``;
    * ``q1sq_q2n``: ``E[Q1^2 Q2^n] = -2 beta/(n+2)^2 E[Q2^{n+1}]
      + (2/(n+2) + 2 beta^2/((n+1)(n+2))) E[Q2^n]``;
    * ``shifted_q1_moment`` (``n >= 1``), with ``A = Q1 + beta``:
      ``E[A^n] = E[A^{n-1} Q2] + (n-1) E[A^{n-2}] - beta^{n-1} E[Q2]``.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    have = set(cycles[0].integrals) if cycles else set()
    missing = [f.name for f in identity_functionals(beta, n_max) if f.name not in have]
    if missing:
        raise KeyError(f"missing functionals: {', '.join(missing)}")
    out = []
    for n in range(n_max + 1):
        out.append(_report(cycles, "local_time_rate", n, {f"L*q2^{n}": 1.0}, {_q2(n + 1): 1.0}))
        out.append(
            _report(cycles, "q1_q2n", n, {f"q1*q2^{n}": 1.0}, {_q2(n): -beta / (n + 1)})
        )
        rhs = _merge(
            (_q2(n + 1), -2.0 * beta / (n + 2) ** 2),
            (_q2(n), 2.0 / (n + 2) + 2.0 * beta**2 / ((n + 1) * (n + 2))),
        )
        out.append(_report(cycles, "q1sq_q2n", n, {f"q1^2*q2^{n}": 1.0}, rhs))
    for n in range(1, n_max + 1):
        terms = [(f"(q1+beta)^{n - 1}*q2", 1.0), ("q2^1", -beta ** (n - 1))]
        if n >= 2:
            terms.append((_a(n - 2), float(n - 1)))
        out.append(_report(cycles, "shifted_q1_moment", n, {_a(n): 1.0}, _merge(*terms)))
    return out
