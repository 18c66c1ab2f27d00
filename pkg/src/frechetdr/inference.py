"""Pointwise asymptotic bands and HulC intervals for effect maps."""

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.stats import norm
from sklearn.base import clone

from ._validation import check_random_state
from .embedding import hilbert_norm, project_rows
from .estimators import FoldFitError


@dataclass(frozen=True, eq=False)
class AsymptoticBand:
    """Coordinate-wise ``theta_t +/- z_{1 - alpha/2} se`` envelopes."""

    t_grid: np.ndarray
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    se: np.ndarray
    alpha: float
    variance: str
    grid_kind: str = "probability_grid"
    bandwidth: Optional[float] = None
    sigma_hat: Optional[np.ndarray] = None

    def covers(self, truth):
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)

    def widths(self):
        """Per-``t`` H-distance between the projected lower and upper envelopes.

        For quantile-function outcomes this is the Wasserstein distance
        between the two envelope distributions.
        """
        lo = project_rows(self.lower, self.grid_kind)
        hi = project_rows(self.upper, self.grid_kind)
        return hilbert_norm(hi - lo, self.grid_kind)

    def mean_width(self):
        return float(np.mean(self.widths()))


def asymptotic_band(estimate, alpha=0.05, variance="influence"):
    """Pointwise normal-approximation band around a dose-response estimate.

    Parameters
    ----------
    estimate : DoseResponseEstimate
    alpha : float
        One minus the pointwise confidence level.
    variance : {"influence", "kernel"}
        ``"influence"`` uses the empirical variance of the per-unit scores,
        which keeps the ``O(1/n)`` spread of the averaged outcome regression.
        ``"kernel"`` uses only the localised residual term,
        ``se^2 = Sigma_t / (n h)`` with
        ``Sigma_t = (int k^2) n^-1 sum_i K_h(T_i - t) h / f(t|X_i)^2 r_i^2``.
        No bias correction is applied in either case; the default bandwidth
        undersmooths.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if variance == "influence":
        se = estimate.pointwise_se
    elif variance == "kernel":
        if estimate.bandwidth is None or estimate.kernel_sigma is None:
            raise ValueError("kernel variance needs an estimate with bandwidth metadata")
        se = estimate.kernel_se()
    else:
        raise ValueError(f"variance must be 'influence' or 'kernel', got {variance!r}")
    z = norm.ppf(1 - alpha / 2)
    return AsymptoticBand(
        t_grid=estimate.t_grid,
        center=estimate.theta,
        lower=estimate.theta - z * se,
        upper=estimate.theta + z * se,
        se=se,
        alpha=alpha,
        variance=variance,
        grid_kind=estimate.grid_kind,
        bandwidth=estimate.bandwidth,
        sigma_hat=estimate.kernel_sigma,
    )


# ---------------------------------------------------------------------------
# HulC


def _hulc_P(B, delta):
    half = Fraction(1, 2)
    return (half - delta) ** B + (half + delta) ** B


def _exact(x):
    # decimal literals such as 0.05 are taken at face value, not as binary floats
    return Fraction(repr(float(x)))


def hulc_B(alpha, delta_bias=0.0, cap=30):
    """Smallest ``B`` with ``P(B; delta) <= alpha`` and the randomisation weight ``tau``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0 <= delta_bias < 0.5:
        raise ValueError("delta_bias must lie in [0, 1/2)")
    a, d = _exact(alpha), _exact(delta_bias)
    B = 1
    while _hulc_P(B, d) > a:
        B += 1
        if B > cap:
            raise ValueError(f"HulC needs more than cap={cap} subsamples at alpha={alpha}")
    P_B, P_prev = _hulc_P(B, d), _hulc_P(B - 1, d)
    tau = (a - P_B) / (P_prev - P_B)
    return B, float(tau)


@dataclass(frozen=True, eq=False)
class HulcInterval:
    alpha: float
    delta_bias: float
    B: int
    B_star: int
    tau: float
    t: float
    t_prime: float
    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    seed: Optional[int] = None

    def covers(self, truth):
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)


def hulc_interval(data, estimator, t, t_prime, alpha=0.05, delta_bias=0.0, seed=None, cap=30):
    """HulC interval for the effect map ``theta_t - theta_t'``.

    The sample is split at random into ``B*`` disjoint subsamples, the
    estimator is refitted on each, and the coordinate-wise range of the
    subsample contrasts is returned.
    """
    rng = check_random_state(seed)
    B, tau = hulc_B(alpha, delta_bias, cap)
    B_star = B if rng.uniform() <= tau else B - 1
    parts = np.array_split(rng.permutation(data.n), B_star)
    deltas = []
    for b, idx in enumerate(parts):
        try:
            est = clone(estimator).fit(data.X[idx], data.T[idx], data.V[idx])
            theta = est.estimate([t, t_prime]).theta
        except (ValueError, FoldFitError, np.linalg.LinAlgError) as exc:
            raise ValueError(
                f"HulC subsample {b} ({idx.size} units) is too small for the estimator: {exc}"
            ) from exc
        deltas.append(theta[0] - theta[1])
    deltas = np.vstack(deltas)
    return HulcInterval(
        alpha=alpha,
        delta_bias=delta_bias,
        B=B,
        B_star=B_star,
        tau=tau,
        t=float(t),
        t_prime=float(t_prime),
        estimates=deltas,
        lower=deltas.min(axis=0),
        upper=deltas.max(axis=0),
        seed=seed if isinstance(seed, (int, np.integer)) else None,
    )
