import json
import math

import numpy as np
import pytest

from jsqlab.experiments import (
    STUDIES,
    StudyReport,
    SweepSpec,
    Verdict,
    beta_key,
    derive_seed,
    figure1,
    figure1_edges,
    fit_q1_tail,
    gamma_limit_study,
    gaussian_limit_study,
    log_convex_increasing,
    mass_below,
    run_study,
)


class TestSeeds:
    def test_deterministic_and_distinct(self):
        assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
        seeds = {derive_seed(7, k, beta_key(b)) for k in range(5) for b in (0.05, 0.1, 0.2)}
        assert len(seeds) == 15
        assert all(0 <= s < 2**64 for s in seeds)

    def test_beta_key(self):
        assert beta_key(0.1) == 100_000
        assert beta_key(0.1 + 1e-12) == beta_key(0.1)


class TestSweepSpec:
    def test_overrides(self):
        spec = SweepSpec([0.1, 0.2], overrides={"0.1": {"cycles": 5}})
        assert spec.betas == (0.1, 0.2)
        assert spec.option(0.1, "cycles", 1) == 5
        assert spec.option(0.2, "cycles", 1) == 1
        assert json.dumps(spec.to_dict())

    @pytest.mark.parametrize("kwargs", [dict(betas=()), dict(betas=(0.0,)), dict(betas=(1,), cycles=1)])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SweepSpec(**kwargs)

    def test_studies_guard_their_beta_range(self):
        with pytest.raises(ValueError):
            gamma_limit_study(SweepSpec((1.0,)))
        with pytest.raises(ValueError):
            gaussian_limit_study(SweepSpec((0.5,)))

    def test_unknown_study(self):
        with pytest.raises(KeyError):
            run_study("nope", SweepSpec((1.0,)))
        assert set(STUDIES) == {"gamma", "gaussian", "q1tail", "hitting", "interchange", "figure1"}


class TestReport:
    def test_verdict_line(self):
        v = Verdict("x", False, 1.23456789, "2", "+-0.3")
        assert v.line() == "FAIL x: measured 1.23457, target 2 (+-0.3)"

    def test_write(self, tmp_path):
        rep = StudyReport("demo")
        rep.add("ok", True, 1.0, "1", "exact")
        rep.tables["t"] = (("a", "b"), [(1, 2.5)])
        written = rep.write(tmp_path)
        assert sorted(written) == ["demo_t.csv", "demo_verdicts.json"]
        assert (tmp_path / "demo_t.csv").read_text() == "a,b\n1,2.5\n"
        payload = json.loads((tmp_path / "demo_verdicts.json").read_text())
        assert payload["passed"] is True
        assert rep.verdict("ok").passed
        with pytest.raises(KeyError):
            rep.verdict("missing")


def test_log_convex_increasing():
    assert log_convex_increasing([1.0, math.e, math.e**3])[0]
    assert not log_convex_increasing([1.0, math.e**2, math.e**3])[0]
    assert not log_convex_increasing([3.0, 2.0, 5.0])[0]


def test_mass_below():
    edges = [0.0, 1.0, 2.0]
    masses = [0.1, 0.4, 0.4, 0.1]
    assert mass_below(edges, masses, 1.0) == pytest.approx(0.5)
    assert mass_below(edges, masses, 1.5) == pytest.approx(0.7)
    assert mass_below(edges, masses, 3.0) == pytest.approx(1.0)
    assert mass_below(edges, masses, -1.0) == pytest.approx(0.1)


def test_figure1_edges_resolve_origin():
    for beta in (0.1, 1.0, 3.0):
        e = figure1_edges(beta)
        assert e["neg_q1"][1] == pytest.approx(0.1)
        q2_width = 0.1 if beta >= 1 else 0.1 / beta
        assert e["q2"][0] == 0.0 and e["q2"][1] == pytest.approx(q2_width)


def test_fit_q1_tail_prefers_mixture_on_mixture_data():
    beta = 0.1
    x = np.linspace(0.05, 2.0, 25)
    probs = 0.2 * np.exp(-5.0 * x) + 0.8 * np.exp(-0.5 * (x / 0.4) ** 2)
    fit = fit_q1_tail(x, probs, beta)
    assert fit["two_component_better"]
    assert fit["two_component_rss"] < 1e-6
    assert fit["shoulder_rate"] == pytest.approx(5.0, rel=0.05)


def test_figure1_short_run():
    rep = figure1(SweepSpec((3.0,), horizon=200.0, burn_in=10.0, seed=1))
    assert {"beta3_neg_q1", "beta3_q2"} <= set(rep.tables)
    masses = [row[3] for row in rep.tables["beta3_q2"][1]]
    assert sum(masses) == pytest.approx(1.0)
    assert rep.verdict("masses sum to 1 (beta=3, q2)").passed
