"""Scripted studies: each turns one asymptotic statement about the diffusion
(or its pre-limit chain) into measurements plus pass/fail verdicts.

Scaling laws whose constants are unknown are checked as ratios across two or
more values of beta, never as absolute values. Every study returns a
:class:`StudyReport` holding CSV tables and a verdict list; ``write`` puts
them under an output directory.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, stats as sps

from . import io, oracles
from .ctmc import CtmcParams, gillespie_run
from .diffusion import DiffusionParams, DiffusionState, hitting_time_q1, hitting_time_q2
from .functionals import Functional, Histogram
from .regeneration import (
    Cycle,
    RegenConfig,
    default_B,
    estimate_combination,
    estimate_stationary,
    run_cycles,
    stationary_histogram,
    tail_curve,
    tail_functionals,
    time_average_run,
)
from .stats import binned_quantile, ks_distance_binned, tail_slope

# grid for the Q2 tail, in units of 1/beta
Q2_TAIL_GRID = tuple(float(v) for v in np.linspace(1.5, 4.5, 7))
# grid for the Q1 tail, in units of sqrt(beta)
Q1_TAIL_GRID = tuple(float(v) for v in np.linspace(0.0, 6.0, 25))

BETA_Q2_EDGES = tuple(np.linspace(0.0, 20.0, 1001))
SHIFTED_Q1_EDGES = tuple(np.linspace(-8.0, 8.0, 801))
LOG10_Q2_EDGES = tuple(np.linspace(-300.0, 2.0, 303))

FIGURE1_HORIZON = 1.5e4
FIGURE1_BETAS = (0.1, 1.0, 3.0)


@dataclass
class SweepSpec:
    """What to run: betas, cycle budgets and where to write."""

    betas: tuple
    cycles: int = 1000
    overrides: dict = field(default_factory=dict)
    replications: int = 200
    seed: int = 0
    workers: int = 1
    n_values: tuple = (1, 50, 200, 500)
    ctmc_horizon: float = 2e4
    horizon: float = FIGURE1_HORIZON
    burn_in: float = 1000.0
    out_dir: Optional[Path] = None

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not self.betas or any(not b > 0 for b in self.betas):
            raise ValueError("betas must be a nonempty list of positive numbers")
        if self.cycles < 2 or self.replications < 2:
            raise ValueError("cycles and replications must be >= 2")
        self.overrides = {float(k): dict(v) for k, v in self.overrides.items()}

    def option(self, beta: float, key: str, default):
        return self.overrides.get(float(beta), {}).get(key, default)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["out_dir"] = None if self.out_dir is None else str(self.out_dir)
        d["overrides"] = {repr(k): v for k, v in self.overrides.items()}
        return d


@dataclass(frozen=True)
class Verdict:
    check: str
    passed: bool
    measured: float
    target: str
    tolerance: str
    note: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.check}: measured {self.measured:.6g}, target {self.target} ({self.tolerance})"


@dataclass
class StudyReport:
    name: str
    verdicts: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, check: str) -> Verdict:
        for v in self.verdicts:
            if v.check == check:
                return v
        raise KeyError(check)

    def add(self, check, passed, measured, target, tolerance, note="") -> Verdict:
        v = Verdict(check, bool(passed), float(measured), str(target), str(tolerance), note)
        self.verdicts.append(v)
        return v

    def write(self, out_dir: Path) -> list[str]:
        out_dir = Path(out_dir)
        written = []
        for key, (header, rows) in self.tables.items():
            name = f"{self.name}_{key}.csv"
            io.write_csv(out_dir / name, header, rows)
            written.append(name)
        name = f"{self.name}_verdicts.json"
        io.write_json(
            out_dir / name,
            {
                "study": self.name,
                "passed": self.passed,
                "checks": [asdict(v) for v in self.verdicts],
                "summary": self.summary,
            },
        )
        written.append(name)
        return written


def derive_seed(master: int, *keys: int) -> int:
    """Independent 64-bit seed for a (study, beta, ...) job."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def beta_key(beta: float) -> int:
    return int(round(beta * 1_000_000))


def _params(spec: SweepSpec, beta: float, *keys: int) -> DiffusionParams:
    dt = spec.option(beta, "dt", None)
    return DiffusionParams(beta, dt=dt, seed=derive_seed(spec.seed, *keys, beta_key(beta)))


def _cycles(spec, beta, functionals, histograms, *keys) -> list[Cycle]:
    config = RegenConfig(
        B=spec.option(beta, "B", default_B(beta)),
        max_cycles=int(spec.option(beta, "cycles", spec.cycles)),
        max_time_per_cycle=spec.option(beta, "max_time_per_cycle", 1e5),
        functionals=tuple(functionals),
        histograms=tuple(histograms),
    )
    return run_cycles(_params(spec, beta, *keys), config, spec.workers)


def truncated_fraction(cycles: Sequence[Cycle]) -> float:
    return sum(c.truncated for c in cycles) / len(cycles)


def mean_cycle_length(cycles: Sequence[Cycle]) -> tuple[float, float]:
    xi = np.array([c.xi for c in cycles if not c.truncated])
    return float(xi.mean()), float(xi.std(ddof=1) / math.sqrt(xi.size))


# ---------------------------------------------------------------- shared runs


def small_beta_functionals(beta: float, q1_tail: bool = True) -> tuple[list, list]:
    fs = [
        Functional.monomial("q1", 1, 0),
        Functional.monomial("q2", 0, 1),
        Functional.monomial("q2^2", 0, 2),
    ]
    fs += tail_functionals("q2_above", [x / beta for x in Q2_TAIL_GRID])
    if q1_tail:
        fs += tail_functionals("q1_below", [x * math.sqrt(beta) for x in Q1_TAIL_GRID])
    hs = [Histogram("beta_q2", "beta_q2", BETA_Q2_EDGES)]
    return fs, hs


def small_beta_cycles(spec: SweepSpec, q1_tail: bool = True) -> dict:
    """Cycles for every beta in ``spec`` with the small-beta functionals."""
    out = {}
    for beta in spec.betas:
        fs, hs = small_beta_functionals(beta, q1_tail)
        out[beta] = _cycles(spec, beta, fs, hs, 1)
    return out


def large_beta_functionals(beta: float) -> tuple[list, list]:
    fs = [Functional.monomial("q2", 0, 1)]
    fs += [Functional.monomial(f"(q1+beta)^{k}", k, 0, beta) for k in range(1, 5)]
    hs = [
        Histogram("q1_plus_beta", "q1_plus_beta", SHIFTED_Q1_EDGES),
        Histogram("log10_q2", "log10_q2", LOG10_Q2_EDGES),
    ]
    return fs, hs


def large_beta_cycles(spec: SweepSpec) -> dict:
    out = {}
    for beta in spec.betas:
        fs, hs = large_beta_functionals(beta)
        out[beta] = _cycles(spec, beta, fs, hs, 2)
    return out


# ------------------------------------------------------------------- studies


def beta_q2_moments(cycles, beta):
    m1 = estimate_combination(cycles, {"q2": beta})
    m2 = estimate_combination(cycles, {"q2^2": beta**2})
    hist = stationary_histogram(cycles, "beta_q2")
    ks = ks_distance_binned(BETA_Q2_EDGES, hist, oracles.gamma2_cdf)
    return m1, m2, ks


def q2_tail_fit(cycles, beta):
    """Exponential fit of the stationary P(Q2 >= y) on the small-beta grid."""
    levels = [x / beta for x in Q2_TAIL_GRID]
    curve = tail_curve(cycles, "q2_above", levels)
    probs = np.array([p.corrected for p in curve])
    with np.errstate(divide="ignore"):
        return tail_slope(levels, np.log(probs))


def gamma_limit_study(spec: SweepSpec, runs: Optional[dict] = None) -> StudyReport:
    """Law of beta*Q2 against Gamma(2) as beta decreases."""
    if any(b > 0.5 for b in spec.betas):
        raise ValueError("gamma_limit_study expects betas in (0, 0.5]")
    runs = small_beta_cycles(spec, q1_tail=False) if runs is None else runs
    rep = StudyReport("gamma_limit")
    rows = []
    ks_by_beta = {}
    for beta in spec.betas:
        cyc = runs[beta]
        m1, m2, ks = beta_q2_moments(cyc, beta)
        ks_by_beta[beta] = ks
        rows.append((beta, m1.n_cycles, ks, m1.value, m1.std_error, m2.value, m2.std_error,
                     truncated_fraction(cyc)))
        rep.add(f"truncation beta={beta:g}", truncated_fraction(cyc) < 0.01,
                truncated_fraction(cyc), "< 0.01", "fraction of cycles")
        if math.isclose(beta, 0.1):
            rep.add("ks beta*q2 vs gamma(2) at beta=0.1", ks <= 0.05, ks, "<= 0.05", "KS distance")
            rep.add("E[beta*q2] at beta=0.1", abs(m1.value - 2) <= 0.3, m1.value, "2", "+-0.3")
            rep.add("E[(beta*q2)^2] at beta=0.1", abs(m2.value - 6) <= 1, m2.value, "6", "+-1")
    if len(spec.betas) > 1:
        scaled = [r[3] for r in rows]
        spread = max(scaled) / min(scaled)
        rep.add("E[q2]*beta constant across betas", spread <= 1.5, spread, "1", "max/min <= 1.5")
    if 0.1 in ks_by_beta and 0.2 in ks_by_beta:
        f1, f2 = q2_tail_fit(runs[0.1], 0.1), q2_tail_fit(runs[0.2], 0.2)
        ratio = f2.slope / f1.slope
        rep.add("q2 tail decay ratio beta=0.2 vs 0.1", abs(ratio - 2) <= 0.6, ratio, "2",
                "+-30%")
        rep.add("q2 tail fit R^2", min(f1.r_squared, f2.r_squared) >= 0.9,
                min(f1.r_squared, f2.r_squared), ">= 0.9", "both fits")
    if 0.1 in ks_by_beta and 0.4 in ks_by_beta:
        rep.add("ks(0.1) <= ks(0.4) + 0.02", ks_by_beta[0.1] <= ks_by_beta[0.4] + 0.02,
                ks_by_beta[0.1], f"<= {ks_by_beta[0.4] + 0.02:.6g}", "monotone trend")
    rep.tables["moments"] = (
        ("beta", "n_cycles", "ks_gamma2", "mean_beta_q2", "se_mean", "second_beta_q2",
         "se_second", "truncated_fraction"),
        rows,
    )
    return rep


def shifted_q1_moments(cycles, beta, n_max=4):
    return {k: estimate_stationary(cycles, f"(q1+beta)^{k}") for k in range(1, n_max + 1)}


def dual_variance_ks(cycles) -> dict:
    """KS of the stationary Q1 + beta against N(0, 1) and N(0, 2)."""
    hist = stationary_histogram(cycles, "q1_plus_beta")
    ks1 = ks_distance_binned(SHIFTED_Q1_EDGES, hist, sps.norm(scale=1.0).cdf)
    ks2 = ks_distance_binned(SHIFTED_Q1_EDGES, hist, sps.norm(scale=math.sqrt(2.0)).cdf)
    return {"ks_variance_1": ks1, "ks_variance_2": ks2,
            "better": "variance 1" if ks1 <= ks2 else "variance 2"}


def q2_median(cycles) -> float:
    hist = stationary_histogram(cycles, "log10_q2")
    return 10.0 ** binned_quantile(LOG10_Q2_EDGES, hist, 0.5)


def fourth_moment_doubling(cycles) -> tuple:
    """Fourth moment of Q1 + beta from the first half of the cycles and from all."""
    half = cycles[: len(cycles) // 2]
    return (estimate_stationary(half, "(q1+beta)^4"),
            estimate_stationary(cycles, "(q1+beta)^4"))


def gaussian_limit_study(spec: SweepSpec, runs: Optional[dict] = None) -> StudyReport:
    """Q1 + beta against a centred normal as beta grows, plus condensation of Q2."""
    if any(b < 1.5 or b > 3.0 for b in spec.betas):
        raise ValueError("gaussian_limit_study expects betas in [1.5, 3]")
    runs = large_beta_cycles(spec) if runs is None else runs
    rep = StudyReport("gaussian_limit")
    rows = []
    for beta in spec.betas:
        cyc = runs[beta]
        mom = shifted_q1_moments(cyc, beta)
        q2 = estimate_stationary(cyc, "q2")
        med = q2_median(cyc)
        ks = dual_variance_ks(cyc)
        xi, xi_se = mean_cycle_length(cyc)
        rows.append((beta, mom[1].n_cycles, xi, xi_se,
                     *(v for k in range(1, 5) for v in (mom[k].value, mom[k].std_error)),
                     q2.value, q2.std_error, med, ks["ks_variance_1"], ks["ks_variance_2"]))
        rep.summary[f"beta={beta:g}"] = {"dual_variance_ks": ks, "median_q2": med}
        rep.add(f"truncation beta={beta:g}", truncated_fraction(cyc) < 0.01,
                truncated_fraction(cyc), "< 0.01", "fraction of cycles")
        if math.isclose(beta, 3.0):
            m1 = mom[1]
            rep.add("E[q1+beta] at beta=3", abs(m1.value) <= 3 * m1.std_error, m1.value, "0",
                    f"+-3 SE = {3 * m1.std_error:.3g}")
            rep.add("E[(q1+beta)^2] at beta=3", abs(mom[2].value - 2.0) <= 0.3, mom[2].value,
                    "2", "+-0.3", note=f"dual-variance KS prefers {ks['better']}")
            half, full = fourth_moment_doubling(cyc)
            stable = math.isfinite(full.value) and abs(full.value - half.value) <= 3 * half.std_error
            rep.add("E[(q1+beta)^4] stable under cycle doubling at beta=3", stable,
                    full.value, f"{half.value:.6g} (half the cycles)",
                    f"+-3 SE = {3 * half.std_error:.3g}")
            rep.add("E[q2] at beta=3", q2.value <= 0.05, q2.value, "<= 0.05", "upper bound")
            ratio = med / q2.value
            rep.add("median(q2)/mean(q2) at beta=3", ratio <= 0.1, ratio, "<= 0.1", "upper bound")
    rep.tables["moments"] = (
        ("beta", "n_cycles", "mean_xi", "se_xi", "m1", "se1", "m2", "se2", "m3", "se3", "m4",
         "se4", "mean_q2", "se_q2", "median_q2", "ks_variance_1", "ks_variance_2"),
        rows,
    )
    return rep


def _two_component(x, logw, c, s, beta):
    w = 1.0 / (1.0 + np.exp(-logw))
    return np.log(w * np.exp(-c * x / math.sqrt(beta)) + (1 - w) * np.exp(-0.5 * (x / s) ** 2))


def fit_q1_tail(levels, probs, beta) -> dict:
    """Fit log P(Q1 <= -x) by a Gaussian alone and by Gaussian + exponential shoulder."""
    x = np.asarray(levels, float)
    y = np.log(np.asarray(probs, float))
    keep = np.isfinite(y) & (x > 0)
    x, y = x[keep], y[keep]
    s0 = max(float(np.sqrt(np.mean(x**2 / np.maximum(-2 * y, 1e-12)))), 1e-3)
    gp, _ = optimize.curve_fit(lambda x, a, s: a - 0.5 * (x / s) ** 2, x, y, p0=(0.0, s0),
                               maxfev=20000)
    rss_g = float(np.sum((y - (gp[0] - 0.5 * (x / gp[1]) ** 2)) ** 2))
    c0 = max(-np.polyfit(x, y, 1)[0] * math.sqrt(beta), 1e-3)
    model = lambda x, logw, c, s: _two_component(x, logw, c, s, beta)  # noqa: E731
    tp, _ = optimize.curve_fit(model, x, y, p0=(0.0, c0, 1.0),
                               bounds=((-20, 1e-6, 1e-3), (20, 1e3, 1e2)), maxfev=20000)
    rss_t = float(np.sum((y - model(x, *tp)) ** 2))
    return {
        "gaussian_rss": rss_g,
        "gaussian_scale": float(abs(gp[1])),
        "two_component_rss": rss_t,
        "shoulder_weight": float(1.0 / (1.0 + math.exp(-tp[0]))),
        "shoulder_c": float(tp[1]),
        "shoulder_rate": float(tp[1] / math.sqrt(beta)),
        "body_scale": float(tp[2]),
        "two_component_better": rss_t < rss_g,
    }


def q1_small_beta_tail_study(spec: SweepSpec, runs: Optional[dict] = None) -> StudyReport:
    """Shape of the Q1 tail for small beta: Gaussian body plus exponential shoulder."""
    if any(b < 0.05 or b > 0.2 for b in spec.betas):
        raise ValueError("q1_small_beta_tail_study expects betas in [0.05, 0.2]")
    runs = small_beta_cycles(spec) if runs is None else runs
    rep = StudyReport("q1_small_beta_tail")
    tails, fits, abs_means = [], {}, {}
    for beta in spec.betas:
        cyc = runs[beta]
        levels = [x * math.sqrt(beta) for x in Q1_TAIL_GRID]
        curve = tail_curve(cyc, "q1_below", levels)
        tails += [(beta, p.level, p.raw.value, p.raw.std_error, p.corrected) for p in curve]
        fits[beta] = fit_q1_tail(levels, [p.corrected for p in curve], beta)
        m = estimate_stationary(cyc, "q1")
        abs_means[beta] = (-m.value, m.std_error)
        rep.add(f"P(q1 <= 0) at beta={beta:g}", curve[0].raw.value == 1.0, curve[0].raw.value,
                "1", "exact")
        rep.add(f"two-component fit beats gaussian at beta={beta:g}",
                fits[beta]["two_component_better"], fits[beta]["two_component_rss"],
                f"< {fits[beta]['gaussian_rss']:.6g}", "residual sum of squares")
    bs = sorted(spec.betas)
    means = [abs_means[b][0] for b in bs]
    ok = all(means[i] <= means[i + 1] + 2 * math.hypot(abs_means[bs[i]][1], abs_means[bs[i + 1]][1])
             for i in range(len(bs) - 1))
    rep.add("E|q1| decreasing as beta decreases", ok, means[0], "increasing in beta",
            "within 2 combined SE")
    if 0.05 in fits and 0.2 in fits:
        ratio = fits[0.05]["shoulder_rate"] / fits[0.2]["shoulder_rate"]
        rep.add("shoulder rate ratio beta=0.05 vs 0.2", 1.0 <= ratio <= 4.0, ratio, "2",
                "within factor 2")
    rep.summary["fits"] = {repr(b): f for b, f in fits.items()}
    rep.tables["tail"] = (("beta", "x", "raw", "se", "isotonic"), tails)
    rep.tables["fits"] = (
        ("beta", "mean_abs_q1", "se", "gaussian_rss", "two_component_rss", "shoulder_rate",
         "shoulder_weight", "body_scale"),
        [(b, *abs_means[b], fits[b]["gaussian_rss"], fits[b]["two_component_rss"],
          fits[b]["shoulder_rate"], fits[b]["shoulder_weight"], fits[b]["body_scale"])
         for b in bs],
    )
    return rep


def mean_hitting_time(hitter: Callable, state, params, level, reps, seed, max_time=1e4):
    """Mean and SE of ``reps`` independent hitting times plus the truncated count."""
    times, trunc = [], 0
    for i in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        res = hitter(state, params, level, max_time, rng=rng)
        if res.hit:
            times.append(res.time)
        else:
            trunc += 1
    t = np.asarray(times)
    return float(t.mean()), float(t.std(ddof=1) / math.sqrt(t.size)), trunc


def log_convex_increasing(values: Sequence[float]) -> tuple[bool, float]:
    """Whether log values on an equally spaced grid increase with positive curvature."""
    lv = np.log(np.asarray(values, float))
    second = np.diff(lv, 2)
    return bool(np.all(np.diff(lv) > 0) and np.all(second > 0)), float(second.min())


TAU2_BETA = 3.0
TAU1_BETAS = (1.5, 2.0, 2.5)
LARGE_XI_BETAS = (2.0, 2.5, 3.0)
SMALL_XI_BETAS = (0.05, 0.1, 0.2)


def hitting_time_studies(spec: SweepSpec, small_runs: Optional[dict] = None,
                         large_runs: Optional[dict] = None) -> StudyReport:
    """Hitting and inter-regeneration times across the large- and small-beta regimes."""
    rep = StudyReport("hitting_times")
    reps = spec.replications

    beta = TAU2_BETA
    params = _params(spec, beta, 3)
    ys = [beta, 2 * beta, 4 * beta]
    rows41, trunc = [], 0
    for k, y in enumerate(ys):
        m, se, tr = mean_hitting_time(hitting_time_q2, DiffusionState(0, 0.0, y), params,
                                      beta / 4, reps, derive_seed(spec.seed, 3, 1, k))
        rows41.append((beta, y, y / beta, m, se, tr))
        trunc += tr
    fit = sps.linregress([r[2] for r in rows41], [r[3] for r in rows41])
    rep.add("tau2(beta/4) slope in y/beta at beta=3", fit.slope > 0, fit.slope, "> 0", "sign")
    rep.add("tau2(beta/4) linearity R^2 at beta=3", fit.rvalue**2 >= 0.9, fit.rvalue**2,
            ">= 0.9", "R^2")
    rep.tables["tau2"] = (("beta", "y", "y_over_beta", "mean", "se", "truncated"), rows41)

    rows42 = []
    for k, b in enumerate(TAU1_BETAS):
        p = _params(spec, b, 3)
        m, se, tr = mean_hitting_time(hitting_time_q1, DiffusionState(0, -b, b / 4), p, 0.0,
                                      reps, derive_seed(spec.seed, 3, 2, k))
        rows42.append((b, m, se, tr))
        trunc += tr
    ok, curv = log_convex_increasing([r[1] for r in rows42])
    rep.add("log E tau1(0) convex increasing over beta in {1.5, 2, 2.5}", ok, curv,
            "> 0", "second difference of log mean")
    rep.tables["tau1"] = (("beta", "mean", "se", "truncated"), rows42)
    frac = trunc / (reps * (len(ys) + len(TAU1_BETAS)))
    rep.add("hitting-time truncation", frac <= 0.01, frac, "<= 0.01", "fraction of runs")

    if large_runs is None:
        large_runs = large_beta_cycles(_subspec(spec, LARGE_XI_BETAS))
    rows47 = [(b, *mean_cycle_length(large_runs[b]), truncated_fraction(large_runs[b]))
              for b in LARGE_XI_BETAS]
    ok, curv = log_convex_increasing([r[1] for r in rows47])
    rep.add("log E[xi] convex increasing over beta in {2, 2.5, 3}", ok, curv, "> 0",
            "second difference of log mean")
    if small_runs is None:
        small_runs = small_beta_cycles(_subspec(spec, SMALL_XI_BETAS), q1_tail=False)
    rows57 = [(b, *mean_cycle_length(small_runs[b]), truncated_fraction(small_runs[b]))
              for b in SMALL_XI_BETAS]
    scaled = [r[1] * r[0] ** 2 for r in rows57]
    spread = max(scaled) / min(scaled)
    rep.add("E[xi]*beta^2 constant over beta in {0.05, 0.1, 0.2}", spread <= 1.5, spread,
            "1", "max/min <= 1.5")
    worst = max(r[3] for r in rows47 + rows57)
    rep.add("cycle truncation", worst < 0.01, worst, "< 0.01", "fraction of cycles")
    rep.tables["cycles"] = (("beta", "mean_xi", "se_xi", "truncated_fraction"), rows47 + rows57)
    return rep


def _subspec(spec: SweepSpec, betas) -> SweepSpec:
    return SweepSpec(betas, spec.cycles, spec.overrides, spec.replications, spec.seed,
                     spec.workers, spec.n_values, spec.ctmc_horizon, spec.horizon,
                     spec.burn_in, spec.out_dir)


def interchange_study(spec: SweepSpec, diffusion_cycles: Optional[list] = None) -> StudyReport:
    """Scaled CTMC stationary means against the diffusion's, as N grows."""
    beta = spec.betas[0]
    rep = StudyReport("interchange")
    if diffusion_cycles is None:
        fs = [Functional.monomial("q1", 1, 0), Functional.monomial("q2", 0, 1)]
        diffusion_cycles = _cycles(spec, beta, fs, (), 4)
    e1 = estimate_stationary(diffusion_cycles, "q1")
    e2 = estimate_stationary(diffusion_cycles, "q2")
    rows, gaps = [], []
    for n in spec.n_values:
        if n == 1:
            continue
        if not beta < math.sqrt(n) / 2:
            raise ValueError(f"need beta < sqrt(N)/2, got N={n}")
        run = gillespie_run(CtmcParams(n, beta, derive_seed(spec.seed, 4, n)), spec.ctmc_horizon)
        (q1, q2), (s1, s2) = run.scaled_means(n), run.scaled_se(n)
        gaps.append((n, abs(q2 - e2.value), math.hypot(s2, e2.std_error)))
        rows.append((n, beta, q1, s1, q2, s2, e1.value, e2.value, abs(q2 - e2.value)))
    rep.tables["means"] = (
        ("n_servers", "beta", "qbar1", "se_qbar1", "qbar2", "se_qbar2", "diffusion_q1",
         "diffusion_q2", "gap_q2"),
        rows,
    )
    if gaps:
        ok = all(gaps[i + 1][1] <= gaps[i][1] + 2 * math.hypot(gaps[i][2], gaps[i + 1][2])
                 for i in range(len(gaps) - 1))
        rep.add("|E qbar2 - E q2| nonincreasing in N", ok, gaps[-1][1], "nonincreasing",
                "within 2 combined SE")
        n_last, last = rows[-1][0], rows[-1]
        rel = last[8] / e2.value
        rep.add(f"relative gap in E q2 at N={n_last}", rel <= 0.2, rel, "0", "<= 0.2")
        rel1 = abs(last[2] + beta) / beta
        rep.add(f"E qbar1 vs -beta at N={n_last}", rel1 <= 0.2, last[2], f"{-beta:g}",
                "within 20%")
    if 1 in spec.n_values:
        rep.tables["mm1"] = (("i", "p_hat", "se", "rho_i"), [])
        rho_beta = 0.5
        run = gillespie_run(CtmcParams(1, rho_beta, derive_seed(spec.seed, 4, 1)),
                            max(spec.ctmc_horizon, 1e5), burn_in=100.0)
        rho = 1.0 - rho_beta
        for i in (1, 2, 3):
            p, se = run.level_means[i - 1], run.level_se[i - 1]
            exact = oracles.mm1_tail(rho, i)
            rep.tables["mm1"][1].append((i, p, se, exact))
            rep.add(f"N=1 P(Q>={i}) vs rho^{i}", abs(p - exact) <= 3 * se, p, f"{exact:g}",
                    f"+-3 SE = {3 * se:.3g}")
    return rep


def figure1_edges(beta: float) -> dict:
    """Bin edges: 0.1-wide for -Q1, and for Q2 when beta >= 1 (else 1/beta scaled)."""
    neg_q1 = np.linspace(0.0, 6.0, 61) if beta <= 1 else np.linspace(0.0, 12.0, 121)
    q2 = np.linspace(0.0, 6.0, 61) if beta >= 1 else np.linspace(0.0, 12.0 / beta, 121)
    return {"neg_q1": neg_q1, "q2": q2}


def mass_below(edges, masses, x: float) -> float:
    """Mass of a slotted histogram below ``x`` (linear inside the straddling bin)."""
    edges = np.asarray(edges, float)
    masses = np.asarray(masses, float)
    total = masses[0]
    for k in range(edges.size - 1):
        lo, hi = edges[k], edges[k + 1]
        if hi <= x:
            total += masses[k + 1]
        elif lo < x:
            total += masses[k + 1] * (x - lo) / (hi - lo)
    if x > edges[-1]:
        total += masses[-1]
    return float(total)


def figure1(spec: SweepSpec) -> StudyReport:
    """Time-weighted histograms of -Q1 and Q2 along one long path per beta."""
    rep = StudyReport("figure1")
    header = ("coordinate", "bin_left", "bin_right", "mass")
    for beta in spec.betas:
        edges = figure1_edges(beta)
        hs = [Histogram(name, name, tuple(e)) for name, e in edges.items()]
        params = _params(spec, beta, 6)
        run = time_average_run(params, [Functional.const()], spec.burn_in + spec.horizon,
                               spec.burn_in, histograms=hs)
        for name, e in edges.items():
            m = run.histograms[name]
            rep.tables[f"beta{beta:g}_{name}"] = (header, io.histogram_rows(name, e, m))
            rep.add(f"masses sum to 1 (beta={beta:g}, {name})", abs(m.sum() - 1) < 1e-9,
                    m.sum(), "1", "1e-9")
        if math.isclose(beta, 3.0):
            m = run.histograms["q2"]
            modal = int(np.argmax(m[1:-1]))
            rep.add("beta=3 q2 modal bin is leftmost", modal == 0 and m[1] >= m[0],
                    modal, "0", "bin index")
            below = mass_below(edges["q2"], m, 0.1)
            rep.add("beta=3 q2 mass below 0.1", below >= 0.8, below, ">= 0.8", "lower bound")
        if math.isclose(beta, 0.1):
            below = mass_below(edges["neg_q1"], run.histograms["neg_q1"], 0.5)
            rep.add("beta=0.1 -q1 mass below 0.5", below >= 0.8, below, ">= 0.8", "lower bound")
    return rep


STUDIES = {
    "gamma": (gamma_limit_study, (0.1, 0.2, 0.4)),
    "gaussian": (gaussian_limit_study, (2.0, 2.5, 3.0)),
    "q1tail": (q1_small_beta_tail_study, (0.05, 0.1, 0.2)),
    "hitting": (hitting_time_studies, (3.0,)),
    "interchange": (interchange_study, (1.0,)),
    "figure1": (figure1, FIGURE1_BETAS),
}


def run_study(name: str, spec: SweepSpec) -> StudyReport:
    if name not in STUDIES:
        raise KeyError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    return STUDIES[name][0](spec)
