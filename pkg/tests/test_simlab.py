import math

import numpy as np
import pytest
from scipy.stats import kurtosis, norm

from frechetdr.embedding import probability_grid
from frechetdr.estimators import IPW, CrossFit, DoublyRobust, OutcomeRegression
from frechetdr.nuisance import GlobalBasisOutcome
from frechetdr.simlab import (
    DgpSpec,
    McReport,
    cardinal,
    default_t_grid,
    gen_covariates,
    gen_outcome,
    gen_treatment,
    mc_theta,
    median_treatment,
    run_monte_carlo,
    simulate,
    summarize,
    transport,
    true_theta,
    truth_for,
    with_n,
)

N_BIG = 100_000


@pytest.fixture(scope="module")
def big_X():
    return gen_covariates(N_BIG, 0)


def test_covariate_moments(big_X):
    assert np.all(np.abs(big_X.mean(axis=0)) <= 0.02)
    assert set(np.unique(big_X[:, 4])) == {-2.0, 2.0}
    assert np.mean(big_X[:, 2] ** 2) == pytest.approx(1.0, abs=0.02)
    assert big_X[:, 5].min() >= -3 and big_X[:, 5].max() <= 3


def test_scenario_one_at_origin():
    T = gen_treatment(np.zeros((N_BIG, 6)), 1, 4)
    assert cardinal(np.zeros(6)) == pytest.approx(-0.8)
    assert T.mean() == pytest.approx(0.28, abs=0.01)
    assert T.std() == pytest.approx(0.5, abs=0.01)


def test_scenario_two_heavy_tails(big_X):
    t1 = gen_treatment(big_X, 1, 1)
    t2 = gen_treatment(big_X, 2, 1)
    assert kurtosis(t2) > 5
    assert kurtosis(t2) > kurtosis(t1)


def test_scenario_three_finite(big_X):
    assert np.all(np.isfinite(gen_treatment(big_X, 3, 2)))
    with pytest.raises(ValueError):
        gen_treatment(big_X[:5], 4, 0)


def test_model_a_origin_example():
    Q = gen_outcome(np.zeros((1, 6)), [0.0], "A", 1.0, 50)
    assert np.allclose(Q[0], 1 + norm.ppf(probability_grid(50)))


def test_transport_fixes_integers_and_is_monotone():
    for k in (-2, -1, 1, 2):
        assert transport(0.0, k) == 0.0
        assert transport(3.0, k) == pytest.approx(3.0)
        x = np.linspace(-5, 5, 20001)
        assert np.all(np.diff(transport(x, k)) >= -1e-12)


def test_generated_outcomes_monotone():
    for model in ("A", "B"):
        d = simulate(DgpSpec(n=500, outcome_model=model, seed=3))
        assert np.all(np.diff(d.V, axis=1) >= -1e-12)


def test_true_theta_examples():
    z = norm.ppf(probability_grid(101))
    assert true_theta(0.0, M=101)[50] == pytest.approx(1.0)
    assert np.allclose(true_theta(1.0, M=101), 0.9 + z)
    assert np.allclose(true_theta(2.0, M=101), 1.4 + z)
    with pytest.raises(ValueError):
        true_theta(1.0, model="B")


def test_mc_oracle_agrees_with_closed_form():
    t = np.array([0.0, 1.0, 2.0])
    mc = mc_theta(t, model="A", M=20)
    # sd of gamma(t, X) is below 1.5 on this range, so 5 sd / sqrt(2e5) < 0.02
    assert np.max(np.abs(mc - true_theta(t, M=20))) <= 0.02
    assert mc_theta(t, model="A", M=20) is mc


def test_truth_for_model_b_uses_oracle():
    spec = DgpSpec(outcome_model="B", M=10)
    assert np.array_equal(truth_for(spec, [1.0]), mc_theta([1.0], "B", 1.0, 10))


def test_generators_reproducible():
    a = simulate(DgpSpec(n=50, seed=9))
    b = simulate(DgpSpec(n=50, seed=9))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.T, b.T) and np.array_equal(a.V, b.V)
    c = simulate(DgpSpec(n=50, seed=10))
    assert not np.array_equal(a.T, c.T)
    ss = simulate(DgpSpec(n=50), seed=np.random.SeedSequence(9))
    assert np.array_equal(ss.V, a.V)


def test_spec_validation():
    for bad in ({"gps_scenario": 0}, {"outcome_model": "C"}, {"n": 5}, {"M": 1}):
        with pytest.raises(ValueError):
            DgpSpec(**bad)
    assert with_n(DgpSpec(n=100), 20).n == 20


def test_default_grids():
    g = default_t_grid(1)
    assert g.size == 9 and np.all(np.diff(g) > 0)
    assert g[0] < median_treatment(1) < g[-1]


# ---------------------------------------------------------------------------
# Monte Carlo runner


def test_single_replication_has_no_sd():
    rep = run_monte_carlo(DgpSpec(n=100, seed=1, M=10), {"or": OutcomeRegression()}, B_mc=1)
    s = rep.summary[("or", "mise")]
    assert s["count"] == 1 and s["sd"] is None and s["mean"] >= 0


def test_summary_recomputable_and_thread_independent():
    ests = {"dr": DoublyRobust(), "cf": CrossFit()}
    kw = dict(metrics=("mise", "loo_mse", "coverage", "band_width"), B_mc=6)
    a = run_monte_carlo(DgpSpec(n=150, seed=4, M=10), ests, **kw)
    b = run_monte_carlo(DgpSpec(n=150, seed=4, M=10), ests, threads=3, **kw)
    assert a.rows == b.rows
    assert isinstance(a, McReport) and a.B_mc == 6 and len(a.rows) == 12
    for (est, m), s in a.summary.items():
        vals = a.values(est, m)
        assert s["mean"] == pytest.approx(vals.mean())
        assert s["sd"] == pytest.approx(vals.std(ddof=1))
    assert summarize(a.rows, kw["metrics"])[0] == a.summary
    assert {r["estimator"] for r in a.summary_rows()} == {"dr", "cf"}


def test_failures_are_recorded_not_fatal():
    ests = {"bad": IPW(kernel="epanechnikov", bandwidth=1e-6), "or": OutcomeRegression()}
    rep = run_monte_carlo(DgpSpec(n=100, seed=2, M=5), ests, B_mc=3)
    assert rep.failures == {"bad": 3, "or": 0}
    assert rep.summary[("bad", "mise")]["count"] == 0
    assert rep.summary[("bad", "mise")]["mean"] is None
    assert all("zero total kernel weight" in r["error"] for r in rep.rows if r["estimator"] == "bad")


def test_runner_argument_errors():
    with pytest.raises(ValueError):
        run_monte_carlo(DgpSpec(n=50), {"or": OutcomeRegression()}, metrics=("rmse",))
    with pytest.raises(ValueError):
        run_monte_carlo(DgpSpec(n=50), {"or": OutcomeRegression()}, B_mc=0)


def test_mise_matches_direct_computation():
    spec = DgpSpec(n=200, seed=7, M=10)
    t = np.array([0.5, 1.5])
    rep = run_monte_carlo(spec, {"or": OutcomeRegression()}, B_mc=1, t_grid=t)
    child = np.random.SeedSequence(7).spawn(1)[0]
    data = simulate(spec, seed=child.spawn(2)[0])
    est = OutcomeRegression().fit(data.X, data.T, data.V).estimate(t)
    direct = np.mean(np.mean((est.projected() - true_theta(t, M=10)) ** 2, axis=1))
    assert rep.rows[0]["mise"] == pytest.approx(direct, rel=1e-12)


def test_mise_permutation_invariance():
    d = simulate(DgpSpec(n=300, seed=1, M=10))
    perm = np.random.default_rng(3).permutation(d.n)
    t = [0.5, 1.0]
    truth = true_theta(t, M=10)
    for est in (OutcomeRegression(), IPW(), DoublyRobust()):
        a = est.fit(d.X, d.T, d.V).predict(t)
        b = est.fit(d.X[perm], d.T[perm], d.V[perm]).predict(t)
        assert np.mean((a - truth) ** 2) == pytest.approx(np.mean((b - truth) ** 2), rel=1e-9)


def test_model_a_coefficients_exact():
    d = simulate(DgpSpec(n=400, sigma=0.0, seed=0, M=3))
    m = GlobalBasisOutcome(model_a_basis=True).fit(d.X, d.T, d.V)
    # basis order: 1, x1..x6, t, t^2, t^3, t*x1..t*x6, x3^2, t*x3^2
    c = np.zeros(18)
    c[0] = 1.0
    c[1:7] = -np.array([0.2, 0.2, 0.3, -0.1, 0.2, 0.2])
    c[7], c[8], c[9] = -0.1, 0.0, 0.1
    c[10:16] = [0.1, 0.0, 0.0, -0.1, -0.1, 0.0]
    c[16], c[17] = 0.0, -0.1
    # sigma = 0 removes the quantile spread, so every coordinate shares one column
    expect = np.outer(c, np.ones(3))
    assert np.max(np.abs(m.coef_ - expect)) <= 1e-8


@pytest.mark.slow
def test_ipw_population_identity():
    t = median_treatment(1)
    rep = run_monte_carlo(DgpSpec(n=2000, seed=20261016), {"ipw": IPW()}, metrics=(), B_mc=200,
                          t_grid=[t], keep_estimates=True)
    est = np.array([r["theta_p"][0] for r in rep.rows])
    bias = est.mean() - true_theta(t)[50]
    mcse = est.std(ddof=1) / math.sqrt(est.size)
    assert abs(bias) <= 2 * mcse
