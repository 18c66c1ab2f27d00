"""Nuisance estimators: the generalized propensity score and the outcome regression.

GPS models follow ``fit(X, T)`` / ``density(t, X)`` / ``evaluate(t, X)``;
outcome models follow ``fit(X, T, V)`` / ``predict(t, X)``. Both are
scikit-learn estimators, so :func:`sklearn.base.clone` produces unfitted
copies for cross-fitting.
"""

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_covariates, check_positive, check_xtv
from .kernels import Kernel

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


def _broadcast_t(t, m):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.full(m, float(t))
    t = t.ravel()
    if t.size != m:
        raise ValueError(f"t has {t.size} entries for {m} covariate rows")
    return t


def _lstsq(B, Y, what):
    n, k = B.shape
    if n <= k:
        raise ValueError(f"{what}: need more than {k} observations, got {n}")
    coef, _, rank, _ = np.linalg.lstsq(B, Y, rcond=None)
    if rank < k:
        raise ValueError(f"{what}: design matrix is rank deficient ({rank} < {k})")
    return coef


# ---------------------------------------------------------------------------
# Generalized propensity score


class _GPSBase(BaseEstimator):
    """Shared positivity floor for GPS models."""

    def evaluate(self, t, X):
        """``max(f(t | x), floor)``; the number of floored values is tallied in ``n_floored_``."""
        f = self.density(t, X)
        low = f < self.floor
        self.n_floored_ = getattr(self, "n_floored_", 0) + int(np.count_nonzero(low))
        return np.where(low, self.floor, f)

    def log_density(self, t, X):
        with np.errstate(divide="ignore"):
            return np.log(self.density(t, X))


class LinearGaussianGPS(_GPSBase):
    """Normal linear model ``T | X ~ N(a + X b, sigma^2)`` fitted by OLS.

    Parameters
    ----------
    floor : float, default=1e-3
        Lower bound applied by :meth:`evaluate`.
    """

    kind = "linear_gaussian"

    def __init__(self, floor=1e-3):
        self.floor = floor

    def fit(self, X, T):
        X, T = check_xtv(X, T)
        n, p = X.shape
        if n < p + 2:
            raise ValueError(f"linear_gaussian GPS needs n >= p + 2 = {p + 2}, got {n}")
        B = np.column_stack([np.ones(n), X])
        coef = _lstsq(B, T, "linear_gaussian GPS")
        resid = T - B @ coef
        self.intercept_ = float(coef[0])
        self.coef_ = coef[1:]
        self.sigma_ = float(np.sqrt(resid @ resid / (n - p - 1)))
        # exact linear fits leave only rounding noise in the residuals
        if not self.sigma_ > 1e-10 * max(1.0, float(np.max(np.abs(T)))):
            raise ValueError("linear_gaussian GPS: zero residual variance")
        self.n_train_ = n
        self.n_floored_ = 0
        return self

    def conditional_mean(self, X):
        check_is_fitted(self, "coef_")
        X = check_covariates(X)
        return self.intercept_ + X @ self.coef_

    def log_density(self, t, X):
        mu = self.conditional_mean(X)
        z = (_broadcast_t(t, mu.size) - mu) / self.sigma_
        return -0.5 * z**2 - np.log(self.sigma_) - _LOG_SQRT_2PI

    def density(self, t, X):
        return np.exp(self.log_density(t, X))


class KernelConditionalGPS(_GPSBase):
    """Nadaraya-Watson type conditional density estimate.

    ``f(t | x) = sum_i K_h(T_i - t) w_i(x) / sum_i w_i(x)`` with product
    Gaussian weights over continuous covariates and exact matching on the
    columns flagged in ``discrete``.

    Parameters
    ----------
    bandwidth : float, optional
        Treatment bandwidth; defaults to ``1.06 sd(T) n**-0.2``.
    covariate_bandwidths : array-like, optional
        Per-column covariate bandwidths; defaults to ``sd(X_j) n**(-1 / (p + 4))``.
    discrete : array-like of bool, optional
    floor : float, default=1e-3
    """

    kind = "kernel_conditional"

    def __init__(self, bandwidth=None, covariate_bandwidths=None, discrete=None, floor=1e-3):
        self.bandwidth = bandwidth
        self.covariate_bandwidths = covariate_bandwidths
        self.discrete = discrete
        self.floor = floor

    def fit(self, X, T):
        X, T = check_xtv(X, T)
        n, p = X.shape
        disc = np.zeros(p, bool) if self.discrete is None else np.asarray(self.discrete, bool)
        if disc.shape != (p,):
            raise ValueError("discrete must be a boolean mask over the columns of X")
        if self.bandwidth is None:
            sd = np.std(T, ddof=1) if n > 1 else 0.0
            h = 1.06 * sd * n ** (-0.2)
        else:
            h = self.bandwidth
        self.bandwidth_ = check_positive(float(h), "bandwidth")
        if self.covariate_bandwidths is None:
            sd = np.std(X, axis=0, ddof=1) if n > 1 else np.zeros(p)
            b = sd * n ** (-1.0 / (p + 4))
            b[disc] = 1.0
        else:
            b = np.asarray(self.covariate_bandwidths, dtype=float).ravel()
            if b.shape != (p,):
                raise ValueError("covariate_bandwidths must have one entry per column")
        if np.any(~(b[~disc] > 0)):
            raise ValueError("covariate bandwidths must be positive (constant covariate?)")
        self.covariate_bandwidths_ = b
        self.discrete_ = disc
        self.X_train_ = X
        self.T_train_ = T
        self.n_floored_ = 0
        return self

    def _log_weights(self, X):
        Xt = self.X_train_
        logw = np.zeros((X.shape[0], Xt.shape[0]))
        for j in range(X.shape[1]):
            if self.discrete_[j]:
                logw[X[:, j][:, None] != Xt[:, j][None, :]] = -np.inf
            else:
                u = (X[:, j][:, None] - Xt[:, j][None, :]) / self.covariate_bandwidths_[j]
                logw -= 0.5 * u**2
        return logw

    def density(self, t, X):
        check_is_fitted(self, "X_train_")
        X = check_covariates(X)
        if X.shape[1] != self.X_train_.shape[1]:
            raise ValueError("X has a different number of columns than the training data")
        t = _broadcast_t(t, X.shape[0])
        logw = self._log_weights(X)
        norm = logsumexp(logw, axis=1, keepdims=True)
        if np.any(~np.isfinite(norm)):
            raise ValueError("zero total covariate weight at a query point; widen the bandwidths")
        w = np.exp(logw - norm)
        kern = Kernel("gaussian", self.bandwidth_)
        return np.sum(w * kern(self.T_train_[None, :] - t[:, None]), axis=1)


class ConstantGPS(_GPSBase):
    """Deliberately wrong GPS that ignores the data: ``f(t | x) = value``."""

    kind = "constant"

    def __init__(self, value=1.0, floor=1e-3):
        self.value = value
        self.floor = floor

    def fit(self, X, T):
        check_xtv(X, T)
        check_positive(self.value, "value")
        self.fitted_ = True
        self.n_floored_ = 0
        return self

    def density(self, t, X):
        X = check_covariates(X)
        return np.full(X.shape[0], float(self.value))


# ---------------------------------------------------------------------------
# Outcome regression


def basis_features(t, X, model_a_basis=False, use_covariates=True):
    """Global basis ``(1, x, t, t^2, t^3, t x)``, plus ``(x_3^2, t x_3^2)`` for model A."""
    X = check_covariates(X)
    t = _broadcast_t(t, X.shape[0])
    cols = [np.ones_like(t)]
    if use_covariates:
        cols.append(X)
    cols += [t, t**2, t**3]
    if use_covariates:
        cols.append(t[:, None] * X)
        if model_a_basis:
            if X.shape[1] < 3:
                raise ValueError("model_a_basis needs at least 3 covariates")
            cols += [X[:, 2] ** 2, t * X[:, 2] ** 2]
    return np.column_stack(cols)


class GlobalBasisOutcome(BaseEstimator):
    """Coordinate-wise least squares of ``V`` on a global polynomial basis.

    Parameters
    ----------
    model_a_basis : bool, default=False
        Add ``x_3^2`` and ``t x_3^2`` columns so that the simulation's outcome
        model A is exactly representable.
    use_covariates : bool, default=True
        ``False`` drops every covariate term; the resulting treatment-only
        regression ignores confounding and serves as a misspecified model.
    """

    kind = "global_basis"

    def __init__(self, model_a_basis=False, use_covariates=True):
        self.model_a_basis = model_a_basis
        self.use_covariates = use_covariates

    def _features(self, t, X):
        return basis_features(t, X, self.model_a_basis, self.use_covariates)

    def fit(self, X, T, V):
        X, T, V = check_xtv(X, T, V)
        B = self._features(T, X)
        self.coef_ = _lstsq(B, V, "global_basis outcome")
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, t, X):
        check_is_fitted(self, "coef_")
        return self._features(t, X) @ self.coef_

    def loo_predict(self, X, T, V):
        """Leave-one-out predictions at the training points via the hat matrix."""
        X, T, V = check_xtv(X, T, V)
        B = self._features(T, X)
        coef = _lstsq(B, V, "global_basis outcome")
        Q, _ = np.linalg.qr(B)
        lev = np.sum(Q**2, axis=1)
        if np.any(lev >= 1 - 1e-12):
            raise ValueError("a training point has leverage 1; leave-one-out is undefined")
        fitted = B @ coef
        return V - (V - fitted) / (1 - lev)[:, None]


class LocalLinearOutcome(BaseEstimator):
    """Kernel-localised (in ``t``) linear regression of ``V`` on ``(1, x, T - t)``."""

    kind = "local_linear"

    def __init__(self, bandwidth=None, kernel="gaussian"):
        self.bandwidth = bandwidth
        self.kernel = kernel

    def fit(self, X, T, V):
        X, T, V = check_xtv(X, T, V)
        n = T.size
        if self.bandwidth is None:
            sd = np.std(T, ddof=1) if n > 1 else 0.0
            h = 1.06 * sd * n ** (-0.2)
        else:
            h = self.bandwidth
        if not (np.isfinite(h) and h > 0):
            raise ValueError(f"local_linear bandwidth must be positive, got {h!r}")
        self.bandwidth_ = float(h)
        self.kernel_ = Kernel(self.kernel, self.bandwidth_)
        self.X_train_, self.T_train_, self.V_train_ = X, T, V
        return self

    def _coef_at(self, t):
        X, T, V = self.X_train_, self.T_train_, self.V_train_
        d = T - t
        if not np.any(np.abs(d) <= 5 * self.bandwidth_):
            raise ValueError(f"zero effective weight at t={t:.6g}: no treatment within 5 bandwidths")
        w = self.kernel_(d)
        B = np.column_stack([np.ones_like(T), X, d])
        sw = np.sqrt(w)[:, None]
        return _lstsq(sw * B, sw * V, f"local_linear outcome at t={t:.6g}")

    def predict(self, t, X):
        check_is_fitted(self, "X_train_")
        X = check_covariates(X)
        t = _broadcast_t(t, X.shape[0])
        out = np.empty((X.shape[0], self.V_train_.shape[1]))
        for tu in np.unique(t):
            rows = t == tu
            coef = self._coef_at(tu)
            out[rows] = np.column_stack([np.ones(rows.sum()), X[rows]]) @ coef[:-1]
        return out


class ConstantOutcome(BaseEstimator):
    """Deliberately wrong outcome model ``gamma(t, x) = value`` in every coordinate."""

    kind = "constant"

    def __init__(self, value=0.0):
        self.value = value

    def fit(self, X, T, V):
        X, T, V = check_xtv(X, T, V)
        self.M_ = V.shape[1]
        return self

    def predict(self, t, X):
        check_is_fitted(self, "M_")
        X = check_covariates(X)
        return np.full((X.shape[0], self.M_), float(self.value))


# ---------------------------------------------------------------------------
# Functional entry points


_GPS_KINDS = {
    "linear_gaussian": LinearGaussianGPS,
    "kernel_conditional": KernelConditionalGPS,
    "constant": ConstantGPS,
}
_OUTCOME_KINDS = {
    "global_basis": GlobalBasisOutcome,
    "local_linear": LocalLinearOutcome,
    "constant": ConstantOutcome,
}


def make_gps(kind="linear_gaussian", **options):
    try:
        cls = _GPS_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown GPS kind {kind!r}; choose from {sorted(_GPS_KINDS)}") from None
    return cls(**options)


def make_outcome(kind="global_basis", **options):
    try:
        cls = _OUTCOME_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown outcome kind {kind!r}; choose from {sorted(_OUTCOME_KINDS)}"
        ) from None
    return cls(**options)


def fit_gps(data, kind="linear_gaussian", **options):
    if kind == "kernel_conditional" and "discrete" not in options:
        options["discrete"] = data.discrete
    return make_gps(kind, **options).fit(data.X, data.T)


def evaluate_gps(model, t, x):
    return model.evaluate(t, x)


def fit_outcome(data, kind="global_basis", **options):
    return make_outcome(kind, **options).fit(data.X, data.T, data.V)


def evaluate_outcome(model, t, x):
    return model.predict(t, x)
