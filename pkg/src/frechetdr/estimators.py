"""Dose-response estimators for embedded outcomes.

All four estimators target ``theta_t = E(V_t)``, the embedding of the Fréchet
mean of the potential outcome at treatment level ``t``:

* :class:`OutcomeRegression` averages the fitted outcome regression over X;
* :class:`IPW` is the self-normalised kernel-weighted inverse-GPS average;
* :class:`DoublyRobust` adds the GPS-weighted residual correction to OR;
* :class:`CrossFit` is the doubly robust estimator with out-of-fold nuisances.

Each estimator is a scikit-learn estimator: ``fit(X, T, V)`` then
``estimate(t_grid)`` (full :class:`DoseResponseEstimate`) or
``predict(t_grid)`` (estimates projected onto the outcome space).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_random_state, check_t_grid, check_xtv
from .embedding import HilbertVector, project_rows, pull_back
from .kernels import Kernel, default_bandwidth
from .nuisance import GlobalBasisOutcome, LinearGaussianGPS

LOW_ESS = 5.0


@dataclass(frozen=True, eq=False)
class DoseResponseEstimate:
    """Estimated embedded dose-response over a treatment grid.

    ``theta`` and ``pointwise_se`` are ``(len(t_grid), M)`` arrays. The
    standard errors are the empirical standard deviation of the per-unit
    scores over ``sqrt(n)``. ``kernel_sigma`` holds the kernel plug-in
    variance ``(int k^2) n^-1 sum_i K_h(T_i - t) h / f(t|X_i)^2 r_i^2`` for
    the kernel-weighted estimators (``None`` for OR).
    """

    t_grid: np.ndarray
    theta: np.ndarray
    pointwise_se: np.ndarray
    estimator_tag: str
    n: int
    grid_kind: str = "probability_grid"
    bandwidth: Optional[float] = None
    kernel_family: Optional[str] = None
    kernel_sigma: Optional[np.ndarray] = None
    bias_proxy: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.theta.shape[1]

    def vector(self, i):
        return HilbertVector(self.theta[i], self.grid_kind)

    def projected(self):
        """Estimates projected onto the image of the outcome space."""
        return project_rows(self.theta, self.grid_kind)

    def objects(self):
        return [pull_back(self.vector(i)) for i in range(len(self.t_grid))]

    def kernel_se(self):
        if self.kernel_sigma is None or self.bandwidth is None:
            raise ValueError(f"{self.estimator_tag} estimate carries no kernel variance")
        return np.sqrt(self.kernel_sigma / (self.n * self.bandwidth))


@dataclass(frozen=True)
class FoldPlan:
    """Balanced random partition of ``range(n)`` into ``L`` folds."""

    L: int
    assignments: np.ndarray
    seed: Optional[int] = None

    @property
    def n(self):
        return self.assignments.size

    def folds(self):
        return [np.flatnonzero(self.assignments == l) for l in range(self.L)]


def make_fold_plan(n, L, seed=None):
    if not 2 <= L <= n:
        raise ValueError(f"number of folds must satisfy 2 <= L <= n, got L={L}, n={n}")
    rng = check_random_state(seed)
    assignments = np.empty(n, dtype=int)
    assignments[rng.permutation(n)] = np.arange(n) % L
    return FoldPlan(L=int(L), assignments=assignments, seed=seed if isinstance(seed, int) else None)


class FoldFitError(RuntimeError):
    def __init__(self, fold, cause):
        super().__init__(f"nuisance fit failed on fold {fold}: {cause}")
        self.fold = fold


# ---------------------------------------------------------------------------
# Per-unit scores at a single treatment level


def _ess(kern, T, t):
    u = (T - t) / kern.bandwidth
    return float(np.sum(kern.k(u)) / kern.k(0.0))


def _bias_terms(gps, outcome, X, t, h, second_moment):
    """Per-unit plug-in ``h^2 B_t`` terms from central differences in ``t``."""
    d = h / 2
    g_m, g_0, g_p = (outcome.predict(s, X) for s in (t - d, t, t + d))
    dg = (g_p - g_m) / (2 * d)
    d2g = (g_p - 2 * g_0 + g_m) / d**2
    lf_m, lf_p = gps.log_density(t - d, X), gps.log_density(t + d, X)
    dlogf = np.nan_to_num((lf_p - lf_m) / (2 * d))
    return h**2 * second_moment * (d2g + dg * dlogf[:, None])


def dr_scores(X, T, V, gps, outcome, kern, t, observed_t=False):
    """Doubly robust scores ``gamma(t, X_i) + K_h(T_i - t) / f(t|X_i) * r_i``.

    ``r_i = V_i - gamma(t, X_i)``, or ``V_i - gamma(T_i, X_i)`` when
    ``observed_t``. Returns ``(scores, kernel_terms, n_trimmed)``.
    """
    G = outcome.predict(t, X)
    R = V - (outcome.predict(T, X) if observed_t else G)
    raw = gps.density(t, X)
    f = np.maximum(raw, gps.floor)
    Kt = kern(T - t)
    scores = G + (Kt / f)[:, None] * R
    kernel_terms = (Kt * kern.bandwidth / f**2)[:, None] * R**2
    return scores, kernel_terms, int(np.count_nonzero(raw < gps.floor))


def _summarise(scores):
    n = scores.shape[0]
    theta = scores.mean(axis=0)
    if n < 2:
        return theta, np.full(theta.shape, np.nan)
    return theta, scores.std(axis=0, ddof=1) / np.sqrt(n)


# ---------------------------------------------------------------------------
# Estimators


class _DoseResponseBase(BaseEstimator):
    tag = None

    def _fit_data(self, X, T, V):
        X, T, V = check_xtv(X, T, V)
        self.X_, self.T_, self.V_ = X, T, V
        self.n_ = T.size
        self.M_ = V.shape[1]
        return X, T, V

    def _kernel(self):
        if getattr(self, "bandwidth", None) in (None, "auto"):
            h = default_bandwidth(self.T_)
        else:
            h = float(self.bandwidth)
        return Kernel(self.kernel, h)

    def predict(self, t_grid):
        """Estimates projected onto the image of the outcome space, shape ``(len(t_grid), M)``."""
        return self.estimate(t_grid).projected()

    def predict_objects(self, t_grid):
        return self.estimate(t_grid).objects()

    def _assemble(self, t_grid, per_t, kern=None, bias=None, extra_diag=None):
        thetas, ses, ksig, trims, ess = [], [], [], [], []
        for scores, kterms, trimmed, e in per_t:
            th, se = _summarise(scores)
            thetas.append(th)
            ses.append(se)
            if kterms is not None:
                ksig.append(kern.roughness * kterms.mean(axis=0))
            trims.append(trimmed)
            ess.append(e)
        ess = np.array(ess, dtype=float)
        diagnostics = {
            "trimmed": np.array(trims, dtype=int),
            "effective_sample_size": ess,
            "low_ess": ess < LOW_ESS,
        }
        if extra_diag:
            diagnostics.update(extra_diag)
        return DoseResponseEstimate(
            t_grid=t_grid,
            theta=np.vstack(thetas),
            pointwise_se=np.vstack(ses),
            estimator_tag=self.tag,
            n=self.n_,
            grid_kind=self.grid_kind,
            bandwidth=None if kern is None else kern.bandwidth,
            kernel_family=None if kern is None else kern.family,
            kernel_sigma=np.vstack(ksig) if ksig else None,
            bias_proxy=bias,
            diagnostics=diagnostics,
        )


class OutcomeRegression(_DoseResponseBase):
    """Plug-in estimator ``theta_t = n^-1 sum_i gamma(t, X_i)``."""

    tag = "or"

    def __init__(self, outcome_model=None, grid_kind="probability_grid"):
        self.outcome_model = outcome_model
        self.grid_kind = grid_kind

    def fit(self, X, T, V):
        X, T, V = self._fit_data(X, T, V)
        model = self.outcome_model if self.outcome_model is not None else GlobalBasisOutcome()
        self.outcome_model_ = clone(model).fit(X, T, V)
        return self

    def estimate(self, t_grid):
        check_is_fitted(self, "outcome_model_")
        t_grid = check_t_grid(t_grid)
        per_t = [
            (self.outcome_model_.predict(t, self.X_), None, 0, float(self.n_)) for t in t_grid
        ]
        return self._assemble(t_grid, per_t)

    def loo_predict(self):
        return _loo_outcome(self.outcome_model, self.outcome_model_, self.X_, self.T_, self.V_)


class IPW(_DoseResponseBase):
    """Self-normalised kernel inverse probability weighting.

    ``theta_t = sum_i w_i V_i / sum_i w_i`` with ``w_i = K_h(T_i - t) / f(t | X_i)``.
    """

    tag = "ipw"

    def __init__(self, gps_model=None, kernel="gaussian", bandwidth="auto",
                 grid_kind="probability_grid"):
        self.gps_model = gps_model
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.grid_kind = grid_kind

    def fit(self, X, T, V):
        X, T, V = self._fit_data(X, T, V)
        model = self.gps_model if self.gps_model is not None else LinearGaussianGPS()
        self.gps_model_ = clone(model).fit(X, T)
        self.kernel_ = self._kernel()
        return self

    def _weights(self, t, X, T):
        raw = self.gps_model_.density(t, X)
        f = np.maximum(raw, self.gps_model_.floor)
        return self.kernel_(T - t) / f, f, int(np.count_nonzero(raw < self.gps_model_.floor))

    def estimate(self, t_grid):
        check_is_fitted(self, "gps_model_")
        t_grid = check_t_grid(t_grid)
        X, T, V, kern = self.X_, self.T_, self.V_, self.kernel_
        per_t, empty = [], []
        for t in t_grid:
            w, f, trimmed = self._weights(t, X, T)
            mw = w.mean()
            if not mw > 0:
                empty.append(t)
                continue
            theta = (w @ V) / w.sum()
            R = V - theta
            # linearised self-normalised scores; their mean is theta exactly
            scores = theta + (w / mw)[:, None] * R
            kterms = (kern(T - t) * kern.bandwidth / f**2)[:, None] * R**2 / mw**2
            per_t.append((scores, kterms, trimmed, _ess(kern, T, t)))
        if empty:
            raise ValueError(f"zero total kernel weight at t = {', '.join(f'{t:.6g}' for t in empty)}")
        return self._assemble(t_grid, per_t, kern)

    def loo_predict(self):
        """``theta_{(-i), T_i}``: the estimate at ``T_i`` leaving unit ``i`` out."""
        check_is_fitted(self, "gps_model_")
        X, T, V = self.X_, self.T_, self.V_
        out = np.empty_like(V)
        for i in range(self.n_):
            w, _, _ = self._weights(T[i], X, T)
            w[i] = 0.0
            if not w.sum() > 0:
                raise ValueError(f"leave-one-out weights vanish for unit {i}")
            out[i] = (w @ V) / w.sum()
        return out


class DoublyRobust(_DoseResponseBase):
    """Kernel doubly robust estimator with nuisances fitted on the full sample.

    Parameters
    ----------
    gps_model, outcome_model : estimator, optional
        Unfitted nuisance estimators (cloned before fitting). Defaults are
        :class:`LinearGaussianGPS` and :class:`GlobalBasisOutcome`.
    kernel : {"gaussian", "epanechnikov"}
    bandwidth : float or "auto"
        ``"auto"`` uses :func:`default_bandwidth`.
    corrector_at_observed_t : bool, default=False
        Evaluate the residual at ``gamma(T_i, X_i)`` instead of ``gamma(t, X_i)``.
    bias_diagnostic : bool, default=False
        Also compute the plug-in ``h^2 B_t`` proxy.
    """

    tag = "dr"

    def __init__(self, gps_model=None, outcome_model=None, kernel="gaussian", bandwidth="auto",
                 corrector_at_observed_t=False, bias_diagnostic=False,
                 grid_kind="probability_grid"):
        self.gps_model = gps_model
        self.outcome_model = outcome_model
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.corrector_at_observed_t = corrector_at_observed_t
        self.bias_diagnostic = bias_diagnostic
        self.grid_kind = grid_kind

    def _nuisances(self):
        gps = self.gps_model if self.gps_model is not None else LinearGaussianGPS()
        outcome = self.outcome_model if self.outcome_model is not None else GlobalBasisOutcome()
        return gps, outcome

    def fit(self, X, T, V):
        X, T, V = self._fit_data(X, T, V)
        gps, outcome = self._nuisances()
        self.gps_model_ = clone(gps).fit(X, T)
        self.outcome_model_ = clone(outcome).fit(X, T, V)
        self.kernel_ = self._kernel()
        return self

    def estimate(self, t_grid):
        check_is_fitted(self, "gps_model_")
        t_grid = check_t_grid(t_grid)
        X, T, V, kern = self.X_, self.T_, self.V_, self.kernel_
        per_t, bias = [], []
        for t in t_grid:
            scores, kterms, trimmed = dr_scores(
                X, T, V, self.gps_model_, self.outcome_model_, kern, t,
                self.corrector_at_observed_t,
            )
            per_t.append((scores, kterms, trimmed, _ess(kern, T, t)))
            if self.bias_diagnostic:
                bias.append(_bias_terms(self.gps_model_, self.outcome_model_, X, t,
                                        kern.bandwidth, kern.second_moment).mean(axis=0))
        return self._assemble(t_grid, per_t, kern, np.vstack(bias) if bias else None)

    def loo_predict(self):
        check_is_fitted(self, "outcome_model_")
        _, outcome = self._nuisances()
        return _loo_outcome(outcome, self.outcome_model_, self.X_, self.T_, self.V_)


class CrossFit(DoublyRobust):
    """Cross-fitted doubly robust estimator.

    For every fold the nuisances are fitted on the other folds and the scores
    of the fold's own units are computed with them. The estimate is the
    average of all ``n`` out-of-fold scores, i.e. fold averages weighted by
    ``|I_l| / n``; with equal fold sizes this is the plain average of the
    ``L`` fold averages, and it coincides with :class:`DoublyRobust` whenever
    every fold receives the same nuisance fits.

    Parameters
    ----------
    n_folds : int, default=5
    random_state : int, Generator or None
        Seeds the fold partition.
    fold_plan : FoldPlan, optional
        Explicit partition; overrides ``n_folds`` and ``random_state``.
    """

    tag = "cf"

    def __init__(self, gps_model=None, outcome_model=None, kernel="gaussian", bandwidth="auto",
                 n_folds=5, corrector_at_observed_t=False, bias_diagnostic=False,
                 random_state=None, fold_plan=None, grid_kind="probability_grid"):
        super().__init__(gps_model, outcome_model, kernel, bandwidth,
                         corrector_at_observed_t, bias_diagnostic, grid_kind)
        self.n_folds = n_folds
        self.random_state = random_state
        self.fold_plan = fold_plan

    def fit(self, X, T, V):
        X, T, V = self._fit_data(X, T, V)
        if self.fold_plan is not None:
            if self.fold_plan.n != self.n_:
                raise ValueError("fold plan does not match the sample size")
            plan = self.fold_plan
        else:
            plan = make_fold_plan(self.n_, self.n_folds, self.random_state)
        gps, outcome = self._nuisances()
        self.fold_plan_ = plan
        self.folds_ = plan.folds()
        self.gps_models_, self.outcome_models_ = [], []
        for l, idx in enumerate(self.folds_):
            train = np.ones(self.n_, bool)
            train[idx] = False
            try:
                g = clone(gps).fit(X[train], T[train])
                o = clone(outcome).fit(X[train], T[train], V[train])
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise FoldFitError(l, exc) from exc
            self.gps_models_.append(g)
            self.outcome_models_.append(o)
        self.kernel_ = self._kernel()
        return self

    def estimate(self, t_grid):
        check_is_fitted(self, "gps_models_")
        t_grid = check_t_grid(t_grid)
        X, T, V, kern = self.X_, self.T_, self.V_, self.kernel_
        per_t, bias = [], []
        for t in t_grid:
            scores = np.empty_like(V)
            kterms = np.empty_like(V)
            btotal = np.zeros(self.M_)
            trimmed = 0
            for idx, g, o in zip(self.folds_, self.gps_models_, self.outcome_models_):
                s, k, tr = dr_scores(X[idx], T[idx], V[idx], g, o, kern, t,
                                     self.corrector_at_observed_t)
                scores[idx], kterms[idx] = s, k
                trimmed += tr
                if self.bias_diagnostic:
                    btotal += _bias_terms(g, o, X[idx], t, kern.bandwidth,
                                          kern.second_moment).sum(axis=0)
            per_t.append((scores, kterms, trimmed, _ess(kern, T, t)))
            if self.bias_diagnostic:
                bias.append(btotal / self.n_)
        return self._assemble(t_grid, per_t, kern, np.vstack(bias) if bias else None,
                              {"n_folds": self.fold_plan_.L})

    def loo_predict(self):
        """Out-of-fold predictions ``gamma^(l)(T_i, X_i)`` for ``i`` in fold ``l``."""
        check_is_fitted(self, "outcome_models_")
        out = np.empty_like(self.V_)
        for idx, o in zip(self.folds_, self.outcome_models_):
            out[idx] = o.predict(self.T_[idx], self.X_[idx])
        return out


def _loo_outcome(template, fitted, X, T, V):
    if hasattr(fitted, "loo_predict"):
        return fitted.loo_predict(X, T, V)
    n = T.size
    out = np.empty_like(V)
    keep = np.ones(n, bool)
    for i in range(n):
        keep[i] = False
        m = clone(template).fit(X[keep], T[keep], V[keep])
        out[i] = m.predict(T[i : i + 1], X[i : i + 1])[0]
        keep[i] = True
    return out


ESTIMATORS = {"or": OutcomeRegression, "ipw": IPW, "dr": DoublyRobust, "cf": CrossFit}


# ---------------------------------------------------------------------------
# Functional entry points over an ObservationSet and fitted nuisances


def _prefit(model):
    """Wrap a fitted nuisance so that ``clone``/``fit`` leave it untouched."""
    return _Prefit(model)


class _Prefit(BaseEstimator):
    def __init__(self, model):
        self.model = model

    def __sklearn_clone__(self):
        return self

    def fit(self, *args):
        return self

    def __getattr__(self, name):
        if name == "model":
            raise AttributeError(name)
        return getattr(self.model, name)


def estimate_or(data, outcome_model, t_grid):
    est = OutcomeRegression(_prefit(outcome_model), grid_kind=data.grid_kind)
    return est.fit(data.X, data.T, data.V).estimate(t_grid)


def estimate_ipw(data, gps_model, kernel, t_grid):
    est = IPW(_prefit(gps_model), kernel.family, kernel.bandwidth, grid_kind=data.grid_kind)
    return est.fit(data.X, data.T, data.V).estimate(t_grid)


def estimate_dr(data, gps_model, outcome_model, kernel, t_grid, corrector_at_observed_t=False):
    est = DoublyRobust(_prefit(gps_model), _prefit(outcome_model), kernel.family,
                       kernel.bandwidth, corrector_at_observed_t, grid_kind=data.grid_kind)
    return est.fit(data.X, data.T, data.V).estimate(t_grid)


def estimate_cf(data, fold_plan, gps_model, outcome_model, kernel, t_grid,
                corrector_at_observed_t=False):
    """Cross-fitted estimate; ``gps_model``/``outcome_model`` are unfitted templates."""
    est = CrossFit(gps_model, outcome_model, kernel.family, kernel.bandwidth,
                   corrector_at_observed_t=corrector_at_observed_t, fold_plan=fold_plan,
                   grid_kind=data.grid_kind)
    return est.fit(data.X, data.T, data.V).estimate(t_grid)
