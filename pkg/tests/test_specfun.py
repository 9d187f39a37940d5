import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from ippest.specfun import EULER_GAMMA, digamma, trigamma


def test_digamma_at_one_is_minus_euler_gamma():
    assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-15)


def test_trigamma_known_values():
    assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-14)
    assert trigamma(3.0) == pytest.approx(math.pi**2 / 6 - 1.25, rel=1e-14)


def test_digamma_of_three():
    assert digamma(3.0) == pytest.approx(1.5 - EULER_GAMMA, rel=1e-14)


def test_vectorised_matches_scipy_on_grid():
    x = np.geomspace(1e-3, 1e3, 2001)
    np.testing.assert_allclose(digamma(x), special.digamma(x), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(trigamma(x), special.polygamma(1, x), rtol=1e-13)


@given(st.floats(min_value=1e-4, max_value=1e6))
@settings(max_examples=300)
def test_recurrences(x):
    assert digamma(x + 1) == pytest.approx(digamma(x) + 1 / x, rel=1e-12, abs=1e-12)
    # the right side cancels two terms of size 1/x**2
    assert trigamma(x + 1) == pytest.approx(trigamma(x) - 1 / x**2, rel=1e-11, abs=1e-14 / x**2)


@pytest.mark.parametrize("fn", [digamma, trigamma])
def test_rejects_non_positive(fn):
    with pytest.raises(ValueError):
        fn(0.0)
    with pytest.raises(ValueError):
        fn(np.array([1.0, -2.0]))
