import math

import numpy as np
import pytest

from jsqlab.diffusion import DiffusionParams, DiffusionState
from jsqlab.functionals import Functional, Histogram
from jsqlab.regeneration import (
    Cycle,
    InsufficientCycles,
    RegenConfig,
    default_B,
    estimate_combination,
    estimate_stationary,
    ratio_estimate,
    run_cycles,
    stationary_histogram,
    tail_curve,
    tail_functionals,
    time_average_run,
)


@pytest.fixture(scope="module")
def beta1_cycles():
    funcs = (
        Functional.monomial("q1", 1),
        Functional.monomial("q2", 0, 1),
        Functional.local_time("L"),
        *tail_functionals("q2_above", [0.5, 1.0, 1.5, 2.0]),
    )
    hist = Histogram("q2", "q2", tuple(np.linspace(0, 4, 41)))
    cfg = RegenConfig(B=default_B(1.0), max_cycles=300, functionals=funcs, histograms=(hist,))
    return run_cycles(DiffusionParams(beta=1.0, seed=123), cfg)


@pytest.mark.parametrize("beta,B", [(0.1, 10.0), (0.5, 2.0), (1.0, 1.0), (4.0, 0.25)])
def test_default_B(beta, B):
    assert default_B(beta) == pytest.approx(B)


def test_default_B_m0():
    assert default_B(0.2, m0=1.0) == pytest.approx(10.0)


class TestConfig:
    def test_adds_constant(self):
        cfg = RegenConfig(B=1.0)
        assert cfg.functional_names == ["one"]

    @pytest.mark.parametrize(
        "kwargs",
        [dict(B=0.0), dict(B=1.0, max_cycles=1), dict(B=1.0, max_time_per_cycle=0.0),
         dict(B=1.0, functionals=(Functional.monomial("x", 1), Functional.monomial("x", 2)))],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            RegenConfig(**kwargs)


class TestCycles:
    def test_constant_integrates_to_length(self, beta1_cycles):
        for c in beta1_cycles:
            assert c.integrals["one"] == pytest.approx(c.xi, rel=1e-9)

    def test_boundary_invariants(self, beta1_cycles):
        for c in beta1_cycles:
            assert not c.truncated
            assert 0.0 < c.alpha1 < c.xi
            assert c.q2_max >= 2.0 and c.q1_min <= 0.0
            assert c.local_time == pytest.approx(c.integrals["L"], rel=1e-9)
            assert c.local_time > 0

    def test_histogram_mass_equals_length(self, beta1_cycles):
        for c in beta1_cycles[:20]:
            assert c.histograms["q2"].sum() == pytest.approx(c.xi, rel=1e-9)
        h = stationary_histogram(beta1_cycles, "q2")
        assert h.sum() == pytest.approx(1.0)
        assert h[0] == 0.0  # q2 is never below 0

    def test_mean_q1_identity(self, beta1_cycles):
        est = estimate_stationary(beta1_cycles, "q1")
        assert abs(est.value + 1.0) <= 4 * est.std_error + 0.02

    def test_local_time_rate_equals_mean_q2(self, beta1_cycles):
        lhs = estimate_stationary(beta1_cycles, "L")
        rhs = estimate_stationary(beta1_cycles, "q2")
        assert abs(lhs.value - rhs.value) <= 4 * math.hypot(lhs.std_error, rhs.std_error)

    def test_tail_curve_monotone(self, beta1_cycles):
        pts = tail_curve(beta1_cycles, "q2_above", [0.5, 1.0, 1.5, 2.0])
        corrected = [p.corrected for p in pts]
        assert all(a >= b for a, b in zip(corrected, corrected[1:]))
        assert 0.0 < corrected[-1] < corrected[0] < 1.0

    def test_workers_do_not_change_results(self):
        cfg = RegenConfig(B=1.0, max_cycles=6, functionals=(Functional.monomial("q2", 0, 1),))
        p = DiffusionParams(beta=1.0, seed=5)
        a = run_cycles(p, cfg, workers=1)
        b = run_cycles(p, cfg, workers=2)
        assert [c.xi for c in a] == [c.xi for c in b]
        assert [c.integrals for c in a] == [c.integrals for c in b]

    def test_truncation_raises_when_nothing_completes(self):
        cfg = RegenConfig(B=1.0, max_cycles=3, max_time_per_cycle=0.01)
        with pytest.raises(InsufficientCycles):
            run_cycles(DiffusionParams(beta=1.0, seed=1), cfg)

    def test_missing_functional(self, beta1_cycles):
        with pytest.raises(KeyError):
            estimate_stationary(beta1_cycles, "q2^7")


class TestRatioEstimate:
    def test_exact_ratio(self):
        x = np.array([1.0, 2.0, 3.0])
        r, se = ratio_estimate(2.5 * x, x)
        assert r == pytest.approx(2.5) and se == pytest.approx(0.0, abs=1e-12)

    def test_jackknife_close_to_delta(self):
        rng = np.random.default_rng(0)
        x = rng.exponential(size=2000)
        y = x * rng.normal(1.0, 0.3, size=2000)
        _, se_d = ratio_estimate(y, x)
        _, se_j = ratio_estimate(y, x, jackknife=True)
        assert se_j == pytest.approx(se_d, rel=0.1)

    def test_too_few(self):
        with pytest.raises(InsufficientCycles):
            ratio_estimate([1.0], [1.0])

    def test_combination_is_linear(self):
        cycles = [
            Cycle(xi=x, integrals={"a": a, "b": b}, q2_max=1, q1_min=0)
            for x, a, b in [(1.0, 0.5, 0.1), (2.0, 1.5, 0.2), (1.5, 0.7, 0.4)]
        ]
        comb = estimate_combination(cycles, {"a": 2.0, "b": -1.0})
        a = estimate_stationary(cycles, "a").value
        b = estimate_stationary(cycles, "b").value
        assert comb.value == pytest.approx(2 * a - b)

    def test_truncated_cycles_excluded(self):
        cycles = [
            Cycle(xi=1.0, integrals={"a": 1.0}, q2_max=1, q1_min=0),
            Cycle(xi=1.0, integrals={"a": 3.0}, q2_max=1, q1_min=0),
            Cycle(xi=5.0, integrals={"a": 100.0}, q2_max=1, q1_min=0, truncated=True),
        ]
        est = estimate_stationary(cycles, "a")
        assert est.value == pytest.approx(2.0)
        assert est.n_cycles == 2 and est.truncated_cycles == 1


class TestTimeAverage:
    def test_agrees_with_regeneration(self, beta1_cycles):
        p = DiffusionParams(beta=1.0, seed=77)
        run = time_average_run(p, [Functional.monomial("q2", 0, 1)], horizon=600.0, burn_in=50.0)
        ta = run.estimates["q2"]
        rg = estimate_stationary(beta1_cycles, "q2")
        assert abs(ta.value - rg.value) <= 4 * math.hypot(ta.std_error, rg.std_error)

    def test_histogram_normalised(self):
        p = DiffusionParams(beta=2.0, seed=1)
        run = time_average_run(
            p, [Functional.monomial("q1", 1)], horizon=20.0, burn_in=1.0, n_batches=4,
            histograms=[Histogram("nq1", "neg_q1", (0.0, 1.0, 2.0, 4.0))],
        )
        h = run.histograms["nq1"]
        assert h.shape == (5,)
        assert h.sum() == pytest.approx(1.0)
        assert h[0] == 0.0
        assert run.final.t == pytest.approx(20.0, abs=p.dt * 4)

    @pytest.mark.parametrize(
        "kwargs", [dict(horizon=1.0, burn_in=1.0), dict(horizon=2.0, burn_in=1.0, n_batches=1)]
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            time_average_run(DiffusionParams(beta=1.0), [Functional.const()], **kwargs)

    def test_initial_state(self):
        p = DiffusionParams(beta=1.0, seed=3)
        run = time_average_run(p, [Functional.const()], horizon=1.0, burn_in=0.0, n_batches=2,
                               initial=DiffusionState(5.0, -1.0, 3.0))
        assert run.final.t == pytest.approx(6.0)
        assert run.estimates["one"].value == pytest.approx(1.0)
