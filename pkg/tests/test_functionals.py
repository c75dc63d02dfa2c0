import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jsqlab.functionals import (
    Functional,
    Histogram,
    accumulate,
    bin_slot,
    encode_functionals,
    encode_histograms,
    eval_functionals,
    tail_name,
)


@pytest.mark.parametrize(
    "functional,q1,q2,expected",
    [
        (Functional.const(), -1.3, 0.7, 1.0),
        (Functional.monomial("q1", 1), -1.5, 2.0, -1.5),
        (Functional.monomial("q1*q2^2", 1, 2), -1.5, 2.0, -6.0),
        (Functional.monomial("a^2", 2, shift=3.0), -1.0, 5.0, 4.0),
        (Functional.q1_below(1.0), -1.0, 1.0, 1.0),
        (Functional.q1_below(1.0), -0.99, 1.0, 0.0),
        (Functional.q2_above(2.0), 0.0, 2.0, 1.0),
        (Functional.q2_above(2.0), 0.0, 1.99, 0.0),
        (Functional.local_time(q2_power=3), -1.0, 2.0, 0.0),
    ],
)
def test_evaluate(functional, q1, q2, expected):
    assert functional.evaluate(q1, q2, beta=1.0) == pytest.approx(expected)


def test_coordinates_through_indicators():
    beta = 0.25
    above = Functional("t", "above", level=1.0, coordinate="beta_q2")
    assert above.evaluate(0.0, 4.0, beta) == 1.0
    assert above.evaluate(0.0, 3.9, beta) == 0.0
    log_above = Functional("t", "above", level=-2.0, coordinate="log10_q2")
    assert log_above.evaluate(0.0, 0.01, beta) == 1.0
    assert log_above.evaluate(0.0, 0.0099, beta) == 0.0
    shifted = Functional("t", "below", level=0.0, coordinate="q1_plus_beta")
    assert shifted.evaluate(-0.25, 1.0, beta) == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="cubic"), dict(coordinate="q3"), dict(q1_power=-1)],
)
def test_functional_validation(kwargs):
    with pytest.raises(ValueError):
        Functional("bad", **kwargs)


def test_tail_names_are_distinct_and_stable():
    assert tail_name("q2_above", 2) == "q2_above:2.0"
    assert Functional.q2_above(0.1).name != Functional.q2_above(0.1000001).name


def test_accumulate_trapezoid_and_local_time():
    spec = encode_functionals([Functional.monomial("q2", 0, 1), Functional.local_time("L", 1)])
    prev = np.zeros(2)
    nxt = np.zeros(2)
    eval_functionals(spec, -0.5, 1.0, 1.0, prev)
    eval_functionals(spec, -0.4, 3.0, 1.0, nxt)
    integrals = np.zeros(2)
    accumulate(spec, prev, nxt, 0.1, 0.2, integrals)
    # trapezoid for dt integrands, left endpoint times dL for local time
    assert integrals[0] == pytest.approx(0.2)
    assert integrals[1] == pytest.approx(0.2)


def test_encode_empty():
    assert encode_functionals([]).shape == (0, 6)
    coords, edges, nbins = encode_histograms([])
    assert coords.shape == (0,) and nbins.shape == (0,)


class TestHistogramSlots:
    edges = np.array([[0.0, 1.0, 2.0, 3.0]])

    @pytest.mark.parametrize(
        "v,slot",
        [(-0.1, 0), (0.0, 1), (0.99, 1), (1.0, 2), (2.5, 3), (3.0, 3), (3.01, 4)],
    )
    def test_examples(self, v, slot):
        assert bin_slot(self.edges, 0, 3, v) == slot

    @given(st.floats(-10, 10))
    def test_matches_searchsorted(self, v):
        e = np.linspace(-5, 5, 41)
        slot = bin_slot(e.reshape(1, -1), 0, 40, v)
        if v < e[0]:
            assert slot == 0
        elif v > e[-1]:
            assert slot == 41
        elif v == e[-1]:
            assert slot == 40
        else:
            assert slot == np.searchsorted(e, v, side="right")

    def test_histogram_validation(self):
        with pytest.raises(ValueError):
            Histogram("h", "q2", (0.0, 0.0, 1.0))
        with pytest.raises(ValueError):
            Histogram("h", "nope", (0.0, 1.0))
        h = Histogram("h", "q2", (0, 1, 2))
        assert h.n_bins == 2 and all(isinstance(v, float) for v in h.edges)

    def test_encode_pads_with_nan(self):
        coords, edges, nbins = encode_histograms(
            [Histogram("a", "q2", (0, 1)), Histogram("b", "neg_q1", (0, 1, 2, 3))]
        )
        assert list(nbins) == [1, 3]
        assert edges.shape == (2, 4)
        assert math.isnan(edges[0, 2])
