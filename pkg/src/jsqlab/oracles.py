"""Closed-form reference quantities for calibrating the simulators.

Everything here is a pure function of its arguments. Formulas are evaluated
with ``expm1``/log-space rearrangements so that large ``beta * level``
products do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ExitProblem:
    """Two-sided exit of ``sqrt(2) W(t) - beta t`` started at 0.

    ``up`` and ``down`` are the distances to the upper barrier ``+up`` and
    the lower barrier ``-down``.
    """

    up: float
    down: float
    beta: float = 0.0

    def __post_init__(self):
        if not (self.up > 0 and self.down > 0):
            raise ValueError("exit barriers must be strictly positive")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")


def bm_exit_prob(p: ExitProblem) -> float:
    """Probability of hitting ``+up`` before ``-down``.

    Uses the scale function ``exp(beta x)``; equals
    ``(1 - e^{-beta b}) / (e^{beta a} - e^{-beta b})``.
    """
    a, b, beta = p.up, p.down, p.beta
    if abs(beta) * (a + b) < 1e-8:
        # first-order expansion; the expm1 ratio underflows for subnormal beta
        return b / (a + b) * (1.0 - 0.5 * beta * a)
    if beta > 0:
        # divide numerator and denominator by e^{beta a}
        return math.exp(-beta * a) * math.expm1(-beta * b) / math.expm1(-beta * (a + b))
    g = -beta
    return math.expm1(-g * b) / math.expm1(-g * (a + b))


def bm_drift_tail_sup(beta: float, level: float) -> float:
    """P(sup_t sqrt(2) W(t) - beta t >= level) = exp(-beta * level)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if level < 0:
        raise ValueError("level must be nonnegative")
    return math.exp(-beta * level)


def ou_hit_zero_tail(x0: float, t: float) -> float:
    """P(OU dX = -X dt + sqrt(2) dW started at ``x0 < 0`` has not hit 0 by ``t``).

    Through the time change ``X(t) = e^{-t}(x0 + B(e^{2t} - 1))`` this is the
    probability that a standard Brownian motion stays below ``|x0|`` up to
    time ``e^{2t} - 1``, i.e. ``2 Phi(|x0| / sqrt(e^{2t} - 1)) - 1``.
    """
    if not x0 < 0:
        raise ValueError("x0 must be negative")
    if not t > 0:
        raise ValueError("t must be positive")
    # sqrt(e^{2t} - 1) = e^t sqrt(1 - e^{-2t}), stable for large t
    scale = math.exp(t) * math.sqrt(-math.expm1(-2.0 * t))
    return math.erf(abs(x0) / (math.sqrt(2.0) * scale))


def gamma2_pdf(x):
    """Density ``x e^{-x}`` of the sum of two unit exponentials."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("gamma2_pdf is defined for x >= 0")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(xa), 0.0, xa * np.exp(-xa))
    return float(out) if out.ndim == 0 else out


def gamma2_cdf(x):
    """CDF ``1 - (1 + x) e^{-x}``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("gamma2_cdf is defined for x >= 0")
    with np.errstate(invalid="ignore"):
        # -expm1(-x) - x e^{-x} keeps relative precision near 0
        out = np.where(np.isinf(xa), 1.0, -np.expm1(-xa) - xa * np.exp(-xa))
    return float(out) if out.ndim == 0 else out


def normal_even_moment(n: int) -> float:
    """E[Z^{2n}] = (2n)! / (2^n n!) for a standard normal Z."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n <= 150:
        return float(math.factorial(2 * n) // (2**n * math.factorial(n)))
    log_m = math.lgamma(2 * n + 1) - n * math.log(2.0) - math.lgamma(n + 1)
    return math.exp(log_m) if log_m < 709.0 else math.inf


def normal_moment(k: int) -> float:
    """E[Z^k]; zero for odd ``k``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return 0.0 if k % 2 else normal_even_moment(k // 2)


def mm1_tail(rho: float, i: int) -> float:
    """P(queue length >= i) for a stationary M/M/1 queue with load ``rho``."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if i < 0:
        raise ValueError("i must be nonnegative")
    return rho**i
