"""Path functionals integrated in streaming fashion by the numba kernels.

Arbitrary Python callables cannot run inside compiled loops, so the
functionals needed for stationary estimation are described declaratively
(:class:`Functional`, :class:`Histogram`) and packed into float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

KINDS = {"const": 0, "monomial": 1, "below": 2, "above": 3, "local_time": 4}
COORDINATES = {
    "q1": 0,
    "neg_q1": 1,
    "q2": 2,
    "beta_q2": 3,
    "q1_plus_beta": 4,
    "log10_q2": 5,
}

_KIND_CONST, _KIND_MONOMIAL, _KIND_BELOW, _KIND_ABOVE, _KIND_LOCAL_TIME = range(5)


@dataclass(frozen=True)
class Functional:
    """A named state functional whose time integral is accumulated per cycle.

    ``monomial`` is ``(q1 + shift)**q1_power * q2**q2_power``; ``below`` and
    ``above`` are indicators ``coord <= level`` / ``coord >= level``;
    ``local_time`` integrates ``q2**q2_power`` against dL instead of dt.
    """

    name: str
    kind: str = "monomial"
    q1_power: int = 0
    q2_power: int = 0
    shift: float = 0.0
    level: float = 0.0
    coordinate: str = "q1"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.coordinate not in COORDINATES:
            raise ValueError(f"unknown coordinate {self.coordinate!r}")
        if self.q1_power < 0 or self.q2_power < 0:
            raise ValueError("powers must be nonnegative")

    @classmethod
    def const(cls, name: str = "one") -> "Functional":
        return cls(name, "const")

    @classmethod
    def monomial(cls, name: str, q1_power: int = 0, q2_power: int = 0, shift: float = 0.0):
        return cls(name, "monomial", q1_power, q2_power, shift)

    @classmethod
    def q1_below(cls, x: float) -> "Functional":
        """Indicator of ``q1 <= -x``."""
        return cls(tail_name("q1_below", x), "below", level=-x, coordinate="q1")

    @classmethod
    def q2_above(cls, y: float) -> "Functional":
        """Indicator of ``q2 >= y``."""
        return cls(tail_name("q2_above", y), "above", level=y, coordinate="q2")

    @classmethod
    def local_time(cls, name: str = "L", q2_power: int = 0) -> "Functional":
        return cls(name, "local_time", q2_power=q2_power)

    def evaluate(self, q1: float, q2: float, beta: float) -> float:
        """Pure-Python evaluation of the dt-integrand (0 for local-time kinds)."""
        return float(_eval_one(self.encode(), q1, q2, beta))

    def encode(self) -> np.ndarray:
        return np.array(
            [
                KINDS[self.kind],
                self.q1_power,
                self.q2_power,
                self.shift,
                self.level,
                COORDINATES[self.coordinate],
            ],
            dtype=np.float64,
        )


def tail_name(coordinate: str, level: float) -> str:
    return f"{coordinate}:{float(level)!r}"


@dataclass(frozen=True)
class Histogram:
    """Time-weighted histogram of one coordinate on fixed bin edges.

    Mass outside ``[edges[0], edges[-1]]`` is kept in separate underflow and
    overflow slots, so the stored array has ``len(edges) + 1`` entries.
    """

    name: str
    coordinate: str
    edges: tuple

    def __post_init__(self):
        if self.coordinate not in COORDINATES:
            raise ValueError(f"unknown coordinate {self.coordinate!r}")
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("histogram edges must be strictly increasing, length >= 2")
        object.__setattr__(self, "edges", tuple(float(v) for v in e))

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1


def encode_functionals(functionals: Sequence[Functional]) -> np.ndarray:
    if not functionals:
        return np.zeros((0, 6))
    return np.vstack([f.encode() for f in functionals])


def encode_histograms(histograms: Sequence[Histogram]):
    """Pack histograms as (coordinate codes, padded edges, bin counts)."""
    n = len(histograms)
    width = max((h.n_bins + 1 for h in histograms), default=2)
    coords = np.zeros(n, dtype=np.int64)
    nbins = np.zeros(n, dtype=np.int64)
    edges = np.full((n, width), np.nan)
    for i, h in enumerate(histograms):
        coords[i] = COORDINATES[h.coordinate]
        nbins[i] = h.n_bins
        edges[i, : h.n_bins + 1] = h.edges
    return coords, edges, nbins


@numba.njit(cache=True, inline="always")
def coordinate_value(code, q1, q2, beta):
    if code == 0:
        return q1
    if code == 1:
        return -q1
    if code == 2:
        return q2
    if code == 3:
        return beta * q2
    if code == 4:
        return q1 + beta
    return math.log10(q2)


@numba.njit(cache=True, inline="always")
def _ipow(x, n):
    r = 1.0
    for _ in range(n):
        r *= x
    return r


@numba.njit(cache=True, inline="always")
def _eval_row(spec, i, q1, q2, beta):
    kind = int(spec[i, 0])
    if kind == _KIND_CONST:
        return 1.0
    if kind == _KIND_MONOMIAL:
        return _ipow(q1 + spec[i, 3], int(spec[i, 1])) * _ipow(q2, int(spec[i, 2]))
    if kind == _KIND_BELOW:
        return 1.0 if coordinate_value(int(spec[i, 5]), q1, q2, beta) <= spec[i, 4] else 0.0
    if kind == _KIND_ABOVE:
        return 1.0 if coordinate_value(int(spec[i, 5]), q1, q2, beta) >= spec[i, 4] else 0.0
    return 0.0


@numba.njit(cache=True)
def _eval_one(row, q1, q2, beta):
    return _eval_row(row.reshape((1, row.shape[0])), 0, q1, q2, beta)


@numba.njit(cache=True, inline="always")
def eval_functionals(spec, q1, q2, beta, out):
    """Fill ``out`` with dt-integrands; local-time rows get their dL weight."""
    for i in range(spec.shape[0]):
        if int(spec[i, 0]) == _KIND_LOCAL_TIME:
            out[i] = _ipow(q2, int(spec[i, 2]))
        else:
            out[i] = _eval_row(spec, i, q1, q2, beta)


@numba.njit(cache=True, inline="always")
def accumulate(spec, fprev, fnext, w, dl, integrals):
    """Trapezoid update over a (possibly partial) step of length ``w``."""
    for i in range(spec.shape[0]):
        if int(spec[i, 0]) == _KIND_LOCAL_TIME:
            integrals[i] += fprev[i] * dl
        else:
            integrals[i] += 0.5 * (fprev[i] + fnext[i]) * w


@numba.njit(cache=True, inline="always")
def bin_slot(edges, j, nb, v):
    """Slot of ``v`` in row ``j`` of ``edges``: 0 is underflow, 1..nb the bins
    (half-open, last one closed), nb+1 overflow."""
    if v < edges[j, 0]:
        return 0
    if v > edges[j, nb]:
        return nb + 1
    if v == edges[j, nb]:
        return nb
    lo, hi = 0, nb
    # invariant: edges[j, lo] <= v < edges[j, hi]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if edges[j, mid] <= v:
            lo = mid
        else:
            hi = mid
    return lo + 1


@numba.njit(cache=True, inline="always")
def accumulate_histograms(hcoords, hedges, hnbins, q1a, q2a, q1b, q2b, beta, w, hists):
    """Half of the step weight goes to the bin of each endpoint."""
    for j in range(hcoords.shape[0]):
        nb = hnbins[j]
        va = coordinate_value(hcoords[j], q1a, q2a, beta)
        vb = coordinate_value(hcoords[j], q1b, q2b, beta)
        hists[j, bin_slot(hedges, j, nb, va)] += 0.5 * w
        hists[j, bin_slot(hedges, j, nb, vb)] += 0.5 * w
