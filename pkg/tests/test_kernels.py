import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from frechetdr.kernels import Kernel, default_bandwidth


def test_bandwidth_rule_example():
    T = np.random.default_rng(0).normal(size=1000)
    T = (T - T.mean()) / T.std(ddof=1)
    assert default_bandwidth(T) == pytest.approx(1000**-0.3)
    assert default_bandwidth(T) == pytest.approx(0.126, abs=5e-4)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(-50, 50))
def test_bandwidth_scales_with_treatment(c, shift):
    T = np.random.default_rng(1).normal(size=200)
    assert default_bandwidth(c * T + shift) == pytest.approx(c * default_bandwidth(T), rel=1e-9)


def test_bandwidth_errors():
    with pytest.raises(ValueError):
        default_bandwidth(np.ones(10))
    with pytest.raises(ValueError):
        default_bandwidth([1.0])


@pytest.mark.parametrize("family", ["gaussian", "epanechnikov"])
def test_moments_and_roughness(family):
    k = Kernel(family)
    m0, m1, m2 = k.moments()
    assert m0 == pytest.approx(1.0, abs=1e-10)
    assert abs(m1) <= 1e-12
    assert m2 == pytest.approx(k.second_moment, abs=1e-10)
    lo, hi = (-np.inf, np.inf) if family == "gaussian" else (-1, 1)
    rough = integrate.quad(lambda u: k.k(u) ** 2, lo, hi)[0]
    assert k.roughness == pytest.approx(rough, abs=1e-10)


@pytest.mark.parametrize("family", ["gaussian", "epanechnikov"])
def test_scaled_kernel_integrates_to_one(family):
    k = Kernel(family, 0.3)
    assert integrate.quad(k, -5, 5, points=[-0.3, 0.3])[0] == pytest.approx(1.0, abs=1e-9)
    assert k(0.1) == pytest.approx(k(-0.1))


def test_kernel_validation():
    with pytest.raises(ValueError):
        Kernel("box")
    with pytest.raises(ValueError):
        Kernel("gaussian", 0.0)
    with pytest.raises(ValueError):
        Kernel("gaussian", np.nan)
