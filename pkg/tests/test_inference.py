import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.stats import norm
from sklearn.isotonic import IsotonicRegression

from frechetdr.estimators import IPW, CrossFit, DoublyRobust, OutcomeRegression
from frechetdr.inference import asymptotic_band, hulc_B, hulc_interval
from frechetdr.nuisance import ConstantOutcome, GlobalBasisOutcome
from frechetdr.simlab import DgpSpec, median_treatment, run_monte_carlo, simulate, true_theta


def _brute_B(alpha, delta):
    # float reference, scanned from B = 1
    P = lambda B: (0.5 - delta) ** B + (0.5 + delta) ** B  # noqa: E731
    B = 1
    while P(B) > alpha:
        B += 1
    near = min(abs(P(b) - alpha) for b in range(1, B + 1))
    return B, (alpha - P(B)) / (P(B - 1) - P(B)), near


# ---------------------------------------------------------------------------
# hulc_B


def test_hulc_B_examples():
    assert hulc_B(0.05, 0.0) == (6, 0.6)
    B, tau = hulc_B(0.5, 0.0)
    assert B == 2 and tau == 0.0
    assert hulc_B(0.1, 0.0) == (5, 0.6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.9), st.floats(0.0, 0.3))
def test_hulc_B_matches_float_scan(alpha, delta):
    rB, rtau, near = _brute_B(alpha, delta)
    # float rounding decides ties at the boundary differently from exact arithmetic
    assume(near > 1e-9)
    B, tau = hulc_B(alpha, delta, cap=10_000)
    assert B == rB
    assert 0.0 <= tau <= 1.0
    assert tau == pytest.approx(rtau, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.9), st.floats(0.001, 0.9), st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_hulc_B_monotone(a1, a2, d1, d2):
    lo_a, hi_a = sorted((a1, a2))
    lo_d, hi_d = sorted((d1, d2))
    assert hulc_B(hi_a, lo_d, cap=10_000)[0] <= hulc_B(lo_a, lo_d, cap=10_000)[0]
    assert hulc_B(lo_a, lo_d, cap=10_000)[0] <= hulc_B(lo_a, hi_d, cap=10_000)[0]


def test_hulc_B_errors():
    with pytest.raises(ValueError, match="cap"):
        hulc_B(1e-12, 0.0)
    with pytest.raises(ValueError):
        hulc_B(0.0)
    with pytest.raises(ValueError):
        hulc_B(0.05, 0.5)


# ---------------------------------------------------------------------------
# hulc_interval


@pytest.fixture(scope="module")
def hdata():
    return simulate(DgpSpec(n=600, seed=3, M=10))


def test_interval_contains_subsample_estimates(hdata):
    h = hulc_interval(hdata, DoublyRobust(), 1.5, 0.5, seed=1)
    assert h.B_star in (h.B - 1, h.B)
    assert h.estimates.shape == (h.B_star, hdata.M)
    assert np.all(h.lower <= h.estimates) and np.all(h.estimates <= h.upper)
    assert np.all(h.lower <= h.upper)
    assert h.seed == 1


def test_swap_negates_and_reflects(hdata):
    a = hulc_interval(hdata, DoublyRobust(), 1.5, 0.5, seed=7)
    b = hulc_interval(hdata, DoublyRobust(), 0.5, 1.5, seed=7)
    assert np.allclose(b.lower, -a.upper) and np.allclose(b.upper, -a.lower)


def test_degenerate_zero_width(hdata):
    h = hulc_interval(hdata, OutcomeRegression(ConstantOutcome(2.0)), 1.0, 0.0, seed=0)
    assert np.all(h.lower == 0) and np.all(h.upper == 0)
    assert np.all(h.covers(np.zeros(hdata.M)))


def test_randomised_subsample_count(hdata):
    est = OutcomeRegression(ConstantOutcome(0.0))
    counts = [hulc_interval(hdata, est, 1.0, 0.0, seed=s).B_star for s in range(400)]
    share = np.mean(np.array(counts) == 6)
    # tau = 0.6; binomial sd is about 0.025
    assert abs(share - 0.6) <= 0.1
    assert set(counts) == {5, 6}


def test_reproducible_from_seed(hdata):
    a = hulc_interval(hdata, IPW(), 1.2, 0.8, seed=11)
    b = hulc_interval(hdata, IPW(), 1.2, 0.8, seed=11)
    assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)


def test_subsample_too_small():
    d = simulate(DgpSpec(n=40, seed=0, M=3))
    with pytest.raises(ValueError, match="too small"):
        hulc_interval(d, CrossFit(random_state=0), 1.0, 0.0, seed=0)


# ---------------------------------------------------------------------------
# Asymptotic bands


def test_noiseless_kernel_band_collapses():
    d = simulate(DgpSpec(n=800, sigma=0.0, seed=2, M=10))
    est = DoublyRobust(outcome_model=GlobalBasisOutcome(model_a_basis=True),
                       corrector_at_observed_t=True).fit(d.X, d.T, d.V).estimate([0.5, 1.0, 1.5])
    band = asymptotic_band(est, 0.05, "kernel")
    assert np.max(band.upper - band.lower) <= 1e-6
    assert np.max(band.sigma_hat) <= 1e-12


def test_band_uses_normal_quantile(hdata):
    est = DoublyRobust().fit(hdata.X, hdata.T, hdata.V).estimate([1.0])
    band = asymptotic_band(est, 0.1)
    assert np.allclose(band.upper - band.center, norm.ppf(0.95) * est.pointwise_se)
    kb = asymptotic_band(est, 0.1, "kernel")
    assert np.allclose(kb.se, np.sqrt(est.kernel_sigma / (est.n * est.bandwidth)))
    assert np.all(band.lower <= band.upper)


@settings(max_examples=10, deadline=None)
@given(st.floats(-100, 100))
def test_band_location_equivariance(c):
    d = simulate(DgpSpec(n=300, seed=5, M=8))
    for variance in ("influence", "kernel"):
        a = asymptotic_band(CrossFit(random_state=0).fit(d.X, d.T, d.V).estimate([1.0]), 0.05, variance)
        b = asymptotic_band(CrossFit(random_state=0).fit(d.X, d.T, d.V + c).estimate([1.0]), 0.05, variance)
        tol = 1e-8 * (1 + abs(c))
        assert np.allclose(b.lower, a.lower + c, atol=tol)
        assert np.allclose(b.upper, a.upper + c, atol=tol)


def test_band_errors(hdata):
    est = OutcomeRegression().fit(hdata.X, hdata.T, hdata.V).estimate([1.0])
    with pytest.raises(ValueError):
        asymptotic_band(est, 0.05, "kernel")
    with pytest.raises(ValueError):
        asymptotic_band(est, 1.5)
    with pytest.raises(ValueError):
        asymptotic_band(est, 0.05, "bootstrap")


def test_width_is_distance_between_envelopes(hdata):
    est = DoublyRobust().fit(hdata.X, hdata.T, hdata.V).estimate([0.8, 1.2])
    band = asymptotic_band(est)
    iso = lambda y: IsotonicRegression().fit_transform(np.arange(y.size), y)  # noqa: E731
    direct = [np.sqrt(np.mean((iso(u) - iso(lo)) ** 2)) for u, lo in zip(band.upper, band.lower)]
    assert np.allclose(band.widths(), direct, atol=1e-10)
    assert band.mean_width() == pytest.approx(np.mean(direct))


def test_kernel_width_rate_over_doubling():
    t = [median_treatment(1)]
    widths = {}
    for n in (500, 1000):
        vals = []
        for b in range(40):
            d = simulate(DgpSpec(n=n, seed=0), seed=np.random.SeedSequence([n, b]))
            est = DoublyRobust().fit(d.X, d.T, d.V).estimate(t)
            band = asymptotic_band(est, 0.05, "kernel")
            vals.append(np.mean(band.upper - band.lower))
        widths[n] = np.mean(vals)
    ratio = widths[1000] / widths[500]
    assert ratio == pytest.approx(2**-0.35, rel=0.15)


@pytest.mark.slow
def test_cf_coverage_at_small_n():
    t = median_treatment(1)
    rep = run_monte_carlo(DgpSpec(n=200, seed=20261016), {"cf": CrossFit()}, metrics=("coverage",),
                          B_mc=200, t_grid=[t], coverage_t=t, coverage_p_index=50)
    cov = rep.summary[("cf", "coverage")]["mean"]
    assert 0.90 <= cov <= 0.98
    assert math.isfinite(true_theta(t)[50])
