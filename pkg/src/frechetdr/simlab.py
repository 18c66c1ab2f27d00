"""Simulation laboratory: data-generating processes, truth oracles and a Monte Carlo runner.

Covariates are six-dimensional (four standard normals, a fair +/-2 coin and a
U(-3, 3) variable); the treatment follows one of three GPS scenarios built on
``r(X) = -0.8 + (0.1, 0.1, -0.1, 0.2, 0.1, 0.1) . X``; outcomes are normal
quantile functions (model A) or their images under random transport maps
(model B).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import norm
from sklearn.base import clone

from ._validation import check_random_state
from .data import ObservationSet
from .embedding import hilbert_norm, probability_grid, project_rows
from .inference import asymptotic_band

R_COEF = np.array([0.1, 0.1, -0.1, 0.2, 0.1, 0.1])
OUTCOME_COEF = np.array([0.2, 0.2, 0.3, -0.1, 0.2, 0.2])
LOG_CLAMP = 0.05
TRANSPORT_K = np.array([-2, -1, 1, 2])
DISCRETE_COLUMNS = np.array([False, False, False, False, True, False])
METRICS = ("mise", "loo_mse", "coverage", "band_width")


@dataclass(frozen=True)
class DgpSpec:
    gps_scenario: int = 1
    outcome_model: str = "A"
    n: int = 1000
    sigma: float = 1.0
    seed: int = 0
    M: int = 100

    def __post_init__(self):
        if self.gps_scenario not in (1, 2, 3):
            raise ValueError(f"gps_scenario must be 1, 2 or 3, got {self.gps_scenario!r}")
        if self.outcome_model not in ("A", "B"):
            raise ValueError(f"outcome_model must be 'A' or 'B', got {self.outcome_model!r}")
        if self.n < 10:
            raise ValueError("simulated samples need n >= 10")
        if self.M < 2:
            raise ValueError("M must be at least 2")


def gen_covariates(n, seed=None):
    rng = check_random_state(seed)
    X = np.empty((n, 6))
    X[:, :4] = rng.standard_normal((n, 4))
    X[:, 4] = rng.choice([-2.0, 2.0], size=n)
    X[:, 5] = rng.uniform(-3.0, 3.0, size=n)
    return X


def cardinal(X):
    return -0.8 + np.asarray(X, dtype=float) @ R_COEF


def gen_treatment(X, scenario, seed=None):
    rng = check_random_state(seed)
    r = cardinal(X)
    n = r.size
    if scenario == 1:
        return 0.9 * r + 1.0 + 0.5 * rng.standard_normal(n)
    if scenario == 2:
        z = rng.standard_normal(n)
        chi2 = rng.chisquare(2, size=n)
        return 0.5 * r + 0.2 + z / np.sqrt(chi2 / 2.0)
    if scenario == 3:
        return 0.7 * np.log(np.maximum(r, LOG_CLAMP)) + 1.3 + rng.standard_normal(n)
    raise ValueError(f"unknown GPS scenario {scenario!r}")


def gamma(T, X):
    """Mean of the model-A outcome distribution at treatment ``T`` and covariates ``X``."""
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    slope = 0.1 - 0.1 * X[..., 0] + 0.1 * X[..., 3] + 0.1 * X[..., 4] + 0.1 * X[..., 2] ** 2
    return 1.0 - X @ OUTCOME_COEF - T * slope + 0.1 * T**3


def transport(x, k):
    """``x - sin(k pi x) / |k pi|``; nondecreasing for every integer ``k != 0``."""
    kp = np.asarray(k, dtype=float) * np.pi
    return x - np.sin(kp * x) / np.abs(kp)


def gen_outcome(X, T, model="A", sigma=1.0, M=100, seed=None):
    """Embedded outcomes: one quantile function per row, shape ``(n, M)``."""
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float).ravel()
    if X.shape[0] != T.size:
        raise ValueError("X and T lengths differ")
    z = norm.ppf(probability_grid(M))
    Q = gamma(T, X)[:, None] + sigma * z[None, :]
    if model == "B":
        rng = check_random_state(seed)
        k = rng.choice(TRANSPORT_K, size=T.size)
        Q = transport(Q, k[:, None])
    elif model != "A":
        raise ValueError(f"unknown outcome model {model!r}")
    if np.any(np.diff(Q, axis=1) < -1e-12):
        raise AssertionError("generated quantile functions are not monotone")
    return Q


def simulate(spec, seed=None):
    """Draw one :class:`ObservationSet` from ``spec``; ``seed`` overrides ``spec.seed``."""
    seed = spec.seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sx, st, sy = (np.random.default_rng(s) for s in ss.spawn(3))
    X = gen_covariates(spec.n, sx)
    T = gen_treatment(X, spec.gps_scenario, st)
    V = gen_outcome(X, T, spec.outcome_model, spec.sigma, spec.M, sy)
    return ObservationSet(X=X, T=T, V=V, discrete=DISCRETE_COLUMNS)


def true_theta(t, model="A", sigma=1.0, M=100):
    """Analytic embedded dose-response for model A: ``1 - 0.2 t + 0.1 t^3 + sigma z_p``."""
    if model != "A":
        raise ValueError("no closed-form truth for model B; use mc_theta")
    t = np.asarray(t, dtype=float)
    z = norm.ppf(probability_grid(M))
    base = 1.0 - 0.2 * t + 0.1 * t**3
    return base[..., None] + sigma * z


def mc_theta(t, model="B", sigma=1.0, M=100, n_oracle=200_000, seed=12345):
    """Brute-force Monte Carlo truth: average embedded outcome at fixed ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return _mc_theta_cached(tuple(t.tolist()), model, float(sigma), int(M), int(n_oracle), seed)


@lru_cache(maxsize=64)
def _mc_theta_cached(t, model, sigma, M, n_oracle, seed):
    rng = np.random.default_rng(seed)
    X = gen_covariates(n_oracle, rng)
    k = rng.choice(TRANSPORT_K, size=n_oracle)
    z = norm.ppf(probability_grid(M))
    out = np.zeros((len(t), M))
    chunk = 20_000
    for j, tj in enumerate(t):
        total = np.zeros(M)
        for s in range(0, n_oracle, chunk):
            Q = gamma(tj, X[s : s + chunk])[:, None] + sigma * z
            if model == "B":
                Q = transport(Q, k[s : s + chunk, None])
            total += Q.sum(axis=0)
        out[j] = total / n_oracle
    out.setflags(write=False)
    return out


def truth_for(spec, t):
    if spec.outcome_model == "A":
        return true_theta(np.atleast_1d(t), "A", spec.sigma, spec.M)
    return mc_theta(t, spec.outcome_model, spec.sigma, spec.M)


@lru_cache(maxsize=8)
def _reference_treatment(scenario, n_ref=100_000):
    rng = np.random.default_rng(2024)
    X = gen_covariates(n_ref, rng)
    return gen_treatment(X, scenario, rng)


def default_t_grid(scenario, count=9, lo=0.1, hi=0.9):
    """Evenly spaced levels between the ``lo`` and ``hi`` quantiles of the scenario's treatment."""
    q = np.quantile(_reference_treatment(scenario), [lo, hi])
    return np.linspace(q[0], q[1], count)


def median_treatment(scenario):
    return float(np.median(_reference_treatment(scenario)))


# ---------------------------------------------------------------------------
# Monte Carlo runner


@dataclass
class McReport:
    """Per-replication metric rows and their across-replication summaries."""

    dgp: DgpSpec
    B_mc: int
    rows: list
    summary: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def summary_rows(self):
        out = []
        for (est, metric), s in sorted(self.summary.items()):
            out.append({"estimator": est, "metric": metric, **s})
        return out

    def values(self, estimator, metric):
        return np.array([r[metric] for r in self.rows
                         if r["estimator"] == estimator and r.get("error") is None])


def summarize(rows, metrics):
    summary, failures = {}, {}
    names = sorted({r["estimator"] for r in rows})
    for est in names:
        mine = [r for r in rows if r["estimator"] == est]
        ok = [r for r in mine if r.get("error") is None]
        failures[est] = len(mine) - len(ok)
        for m in metrics:
            vals = [r[m] for r in ok]
            k = len(vals)
            mean = math.fsum(vals) / k if k else None
            sd = None
            if k > 1:
                sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (k - 1))
            summary[(est, m)] = {"mean": mean, "sd": sd, "count": k}
    return summary, failures


def _seed_int(ss):
    return int(ss.generate_state(1)[0])


def _one_replication(r, ss, dgp, estimators, metrics, t_grid, cov_t, cov_p, alpha, truth,
                     cov_truth, variance, keep_estimates):
    data_ss, est_ss = ss.spawn(2)
    data = simulate(dgp, seed=data_ss)
    rows = []
    grid = np.append(t_grid, cov_t)
    for name, template in estimators.items():
        row = {"replication": r, "estimator": name, "error": None}
        try:
            est = clone(template)
            if "random_state" in est.get_params() and est.get_params()["random_state"] is None:
                est.set_params(random_state=_seed_int(est_ss))
            est.fit(data.X, data.T, data.V)
            fit = est.estimate(grid)
            main = fit.theta[:-1]
            if keep_estimates:
                row["theta_p"] = main[:, cov_p].tolist()
            if "mise" in metrics:
                proj = project_rows(main, fit.grid_kind)
                row["mise"] = float(np.mean(hilbert_norm(proj - truth, fit.grid_kind) ** 2))
            if "loo_mse" in metrics:
                pred = project_rows(est.loo_predict(), fit.grid_kind)
                row["loo_mse"] = float(np.mean(hilbert_norm(pred - data.V, fit.grid_kind) ** 2))
            if "coverage" in metrics or "band_width" in metrics:
                band = asymptotic_band(fit, alpha, variance)
                if "coverage" in metrics:
                    lo, hi = band.lower[-1, cov_p], band.upper[-1, cov_p]
                    row["coverage"] = float(lo <= cov_truth <= hi)
                if "band_width" in metrics:
                    row["band_width"] = float(np.mean(band.widths()[:-1]))
        except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            row = {"replication": r, "estimator": name, "error": f"{type(exc).__name__}: {exc}"}
            row.update({m: None for m in metrics})
        rows.append(row)
    return rows


def run_monte_carlo(dgp, estimators, metrics=("mise",), B_mc=100, t_grid=None, alpha=0.05,
                    coverage_t=None, coverage_p_index=None, variance="influence", threads=1,
                    keep_estimates=False):
    """Replicate ``dgp`` ``B_mc`` times and score every estimator.

    Parameters
    ----------
    dgp : DgpSpec
        ``dgp.seed`` is the master seed; replication ``r`` uses the ``r``-th
        child of ``SeedSequence(dgp.seed)`` so results do not depend on
        ``threads`` or execution order.
    estimators : dict
        Name -> unfitted estimator (cloned per replication).
    metrics : iterable of {"mise", "loo_mse", "coverage", "band_width"}
    t_grid : array-like, optional
        Defaults to :func:`default_t_grid` for the scenario.
    coverage_t, coverage_p_index :
        Where coverage is checked; default the scenario's median treatment
        and the middle probability-grid coordinate.
    keep_estimates : bool
        Store each replication's estimate at ``coverage_p_index`` over
        ``t_grid`` in ``row["theta_p"]`` (used for bias studies).
    """
    metrics = tuple(metrics)
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    if B_mc < 1:
        raise ValueError("B_mc must be at least 1")
    t_grid = default_t_grid(dgp.gps_scenario) if t_grid is None else np.asarray(t_grid, float)
    cov_t = median_treatment(dgp.gps_scenario) if coverage_t is None else float(coverage_t)
    cov_p = dgp.M // 2 if coverage_p_index is None else int(coverage_p_index)
    truth = truth_for(dgp, t_grid)
    cov_truth = float(truth_for(dgp, cov_t)[0, cov_p])
    children = np.random.SeedSequence(dgp.seed).spawn(B_mc)
    args = (dgp, estimators, metrics, t_grid, cov_t, cov_p, alpha, truth, cov_truth, variance,
            keep_estimates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda rs: _one_replication(rs[0], rs[1], *args),
                                   enumerate(children)))
    else:
        chunks = [_one_replication(r, ss, *args) for r, ss in enumerate(children)]
    rows = [row for chunk in chunks for row in chunk]
    summary, failures = summarize(rows, metrics)
    return McReport(dgp=dgp, B_mc=B_mc, rows=rows, summary=summary, failures=failures)


def with_n(dgp, n):
    return replace(dgp, n=n)
