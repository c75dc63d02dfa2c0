import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsqlab.diffusion import (
    DiffusionParams,
    DiffusionState,
    NumericalBlowUp,
    default_dt,
    draw,
    drift,
    free_exit,
    hitting_time_q1,
    hitting_time_q2,
    record_path,
    replication_rng,
    simulate_until,
    step,
)

q1s = st.floats(-20, 0)
q2s = st.floats(1e-6, 20)
betas = st.floats(0.01, 10)
zs = st.floats(-6, 6)
vs = st.floats(0, 0.999999)


@pytest.mark.parametrize(
    "q1,q2,beta,expected",
    [(0.0, 1.0, 1.0, (0.0, -1.0)), (-2.0, 0.5, 0.3, (2.2, -0.5)), (-1.0, 0.0, 2.0, (-1.0, 0.0))],
)
def test_drift_examples(q1, q2, beta, expected):
    assert drift(q1, q2, beta) == pytest.approx(expected)


class TestProjectionStep:
    params = DiffusionParams(beta=1.0, dt=0.01, scheme="projection")

    def test_interior_step(self):
        s = step(DiffusionState(0.0, -1.0, 1.0), self.params, z=0.0)
        assert s.q1 == pytest.approx(-1.0 + 0.01)
        assert s.q2 == pytest.approx(0.99)
        assert s.l == 0.0 and s.t == pytest.approx(0.01)

    def test_reflection_moves_overshoot_to_q2(self):
        s = step(DiffusionState(0.0, 0.0, 1.0), self.params, z=1.0)
        overshoot = 0.01 * (-1.0 + 1.0) + math.sqrt(0.02)
        assert s.q1 == 0.0
        assert s.l == pytest.approx(overshoot)
        assert s.q2 == pytest.approx(0.99 + overshoot)

    def test_uniform_ignored(self):
        a = step(DiffusionState(0.0, -0.01, 1.0), self.params, z=0.7, v=0.1)
        b = step(DiffusionState(0.0, -0.01, 1.0), self.params, z=0.7, v=0.9)
        assert a == b

    @given(q1=q1s, q2=q2s, beta=betas, z=zs)
    def test_local_time_only_at_zero(self, q1, q2, beta, z):
        p = DiffusionParams(beta=beta, dt=1e-3, scheme="projection")
        s0 = DiffusionState(0.0, q1, q2)
        s1 = step(s0, p, z)
        assert s1.q1 <= 0.0 and s1.l >= 0.0
        if s1.l > 0:
            assert s1.q1 == 0.0


class TestBridgeStep:
    @given(q1=q1s, q2=q2s, beta=betas, z=zs, v=vs)
    @settings(max_examples=300)
    def test_sum_identity(self, q1, q2, beta, z, v):
        # local time cancels in q1 + q2
        p = DiffusionParams(beta=beta, dt=1e-3)
        s0 = DiffusionState(0.0, q1, q2)
        s1 = step(s0, p, z, v)
        expected = math.sqrt(2 * p.dt) * z - beta * p.dt - q1 * p.dt
        floor_gap = max(0.0, p.q2_floor - (q2 * (1 - p.dt) + (s1.l - s0.l)))
        assert (s1.q1 + s1.q2) - (q1 + q2) == pytest.approx(expected + floor_gap, abs=1e-9 * (1 + abs(q1) + q2))

    @given(q1=q1s, q2=q2s, beta=betas, z=zs, v=vs)
    def test_invariants(self, q1, q2, beta, z, v):
        s1 = step(DiffusionState(0.0, q1, q2), DiffusionParams(beta=beta, dt=1e-3), z, v)
        assert s1.q1 <= 0.0
        assert s1.q2 > 0.0
        assert s1.l >= 0.0

    def test_far_from_boundary_matches_projection(self):
        s0 = DiffusionState(0.0, -3.0, 1.0)
        a = step(s0, DiffusionParams(beta=1.0, dt=1e-3), 0.5, 0.3)
        b = step(s0, DiffusionParams(beta=1.0, dt=1e-3, scheme="projection"), 0.5)
        assert a == b

    def test_bridge_local_time_without_endpoint_crossing(self):
        # both endpoints below zero, but the bridge maximum can still exceed it
        s0 = DiffusionState(0.0, -0.001, 1.0)
        s1 = step(s0, DiffusionParams(beta=1.0, dt=1e-3), z=-0.01, v=0.99)
        assert s1.l > 0.0 and s1.q1 < 0.0

    def test_q2_floor(self):
        p = DiffusionParams(beta=1.0, dt=0.5, q2_floor=1e-3)
        s = DiffusionState(0.0, -5.0, 1e-3)
        for _ in range(20):
            s = step(s, p, z=0.0)
        assert s.q2 == pytest.approx(1e-3)

    def test_invalid_random_inputs(self):
        p = DiffusionParams(beta=1.0)
        with pytest.raises(NumericalBlowUp):
            step(DiffusionState(), p, z=math.nan)
        with pytest.raises(NumericalBlowUp):
            step(DiffusionState(), p, z=0.0, v=1.0)


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(beta=0.0), dict(beta=-1.0), dict(beta=math.inf), dict(beta=1.0, dt=0.0),
         dict(beta=1.0, dt=1.5), dict(beta=1.0, seed=-1), dict(beta=1.0, scheme="milstein")],
    )
    def test_params(self, kwargs):
        with pytest.raises(ValueError):
            DiffusionParams(**kwargs)

    @pytest.mark.parametrize("q1,q2,l", [(0.1, 1.0, 0.0), (-1.0, 0.0, 0.0), (-1.0, 1.0, -0.1)])
    def test_state(self, q1, q2, l):
        with pytest.raises(ValueError):
            DiffusionState(0.0, q1, q2, l)

    def test_nonfinite_state(self):
        with pytest.raises(NumericalBlowUp):
            DiffusionState(0.0, -math.inf, 1.0)

    @pytest.mark.parametrize("beta,dt", [(1.0, 1e-3), (0.1, 1e-3), (0.05, 5e-4), (3.0, 1e-3), (50.0, 2e-4), (20.0, 5e-4)])
    def test_default_dt(self, beta, dt):
        assert default_dt(beta) == pytest.approx(dt)
        assert DiffusionParams(beta=beta).dt == pytest.approx(dt)


class TestDeterminism:
    def test_record_path_reproducible(self):
        p = DiffusionParams(beta=1.0, seed=42)
        a = record_path(DiffusionState(), p, 5.0, stride=10)
        b = record_path(DiffusionState(), p, 5.0, stride=10)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (501, 4)

    def test_streams_differ(self):
        a = replication_rng(7, 0).random(4)
        b = replication_rng(7, 1).random(4)
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, replication_rng(7, 0).random(4))

    @pytest.mark.parametrize("scheme", ["bridge", "projection"])
    def test_python_and_compiled_paths_agree(self, scheme):
        p = DiffusionParams(beta=0.7, dt=1e-3, seed=3, scheme=scheme)
        s0 = DiffusionState(0.0, -0.2, 1.5)
        path = record_path(s0, p, 1.0, rng=np.random.default_rng(9))
        end, stopped, totals = simulate_until(
            s0, p, lambda s: False, max_time=1.0 - 1e-12,
            observers=[lambda s: s.q2], rng=np.random.default_rng(9),
        )
        assert not stopped
        assert (end.q1, end.q2, end.l) == pytest.approx(tuple(path[-1, 1:]), abs=1e-12)
        q2 = path[:, 2]
        assert totals[0] == pytest.approx(np.sum(0.5 * (q2[1:] + q2[:-1])) * p.dt, rel=1e-12)

    def test_draw_order(self):
        p = DiffusionParams(beta=1.0)
        rng = np.random.default_rng(1)
        z, v = draw(rng, p)
        ref = np.random.default_rng(1)
        assert z == ref.standard_normal() and v == ref.random()


class TestSimulateUntil:
    def test_stops_immediately(self):
        s0 = DiffusionState(0.0, -1.0, 2.0)
        end, stopped, totals = simulate_until(s0, DiffusionParams(beta=1.0), lambda s: True, 1.0)
        assert stopped and end == s0

    def test_stop_rule(self):
        p = DiffusionParams(beta=1.0, dt=1e-3, seed=2)
        end, stopped, _ = simulate_until(DiffusionState(0.0, 0.0, 2.0), p, lambda s: s.q2 <= 1.0, 100.0)
        assert stopped and end.q2 <= 1.0

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            simulate_until(DiffusionState(1.0), DiffusionParams(beta=1.0), lambda s: False, 0.5)


class TestHitting:
    def test_already_at_level(self):
        r = hitting_time_q2(DiffusionState(0.0, -1.0, 2.0), DiffusionParams(beta=1.0), 2.0, 1.0)
        assert r.hit and r.time == 0.0

    def test_q2_decay_without_noise_effect(self):
        # far below zero Q1 cannot reflect soon, so Q2 decays like e^{-t}
        p = DiffusionParams(beta=5.0, dt=1e-4, seed=1)
        r = hitting_time_q2(DiffusionState(0.0, -30.0, 2.0), p, 1.0, 5.0)
        assert r.hit
        assert r.time == pytest.approx(math.log(2.0), abs=2e-4)
        assert r.state_at_hit.q2 == 1.0

    def test_q1_hits_zero(self):
        p = DiffusionParams(beta=0.5, dt=1e-3, seed=4)
        r = hitting_time_q1(DiffusionState(0.0, -0.5, 1.0), p, 0.0, 50.0)
        assert r.hit and r.state_at_hit.q1 == 0.0
        assert 0.0 < r.time <= 50.0

    def test_truncation(self):
        p = DiffusionParams(beta=3.0, dt=1e-3, seed=4)
        r = hitting_time_q2(DiffusionState(0.0, -3.0, 0.01), p, 50.0, 0.5)
        assert not r.hit
        assert r.truncated_at == 0.5
        assert r.time == pytest.approx(0.5)

    def test_invalid_levels(self):
        p = DiffusionParams(beta=1.0)
        with pytest.raises(ValueError):
            hitting_time_q1(DiffusionState(), p, 0.5, 1.0)
        with pytest.raises(ValueError):
            hitting_time_q2(DiffusionState(), p, 0.0, 1.0)
        with pytest.raises(ValueError):
            hitting_time_q2(DiffusionState(), p, 1.0, math.inf)


class TestFreeExit:
    def test_outcomes(self):
        out, times = free_exit(2000, 0.0, -1.0, 1.0, 1.0, 1e-3, 50.0, rng=np.random.default_rng(0))
        assert set(np.unique(out)) <= {-1, 0, 1}
        assert np.all(times > 0)
        # upward exit against a negative drift is the rarer outcome
        assert 0.15 < np.mean(out == 1) < 0.4

    def test_truncated_replications(self):
        out, times = free_exit(10, 0.0, -100.0, 100.0, 0.0, 1e-2, 0.1, rng=np.random.default_rng(0))
        assert np.all(out == 0)
        np.testing.assert_allclose(times, 0.1)
