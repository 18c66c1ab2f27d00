"""Smoothing kernels used to localise the treatment."""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

_SQRT_2PI = np.sqrt(2 * np.pi)


def gaussian(u):
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u**2) / _SQRT_2PI


def epanechnikov(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u**2), 0.0)


KERNELS = {"gaussian": gaussian, "epanechnikov": epanechnikov}

# int k^2 and int u^2 k for each family
_ROUGHNESS = {"gaussian": 1.0 / (2.0 * np.sqrt(np.pi)), "epanechnikov": 0.6}
_SECOND_MOMENT = {"gaussian": 1.0, "epanechnikov": 0.2}
_SUPPORT = {"gaussian": (-np.inf, np.inf), "epanechnikov": (-1.0, 1.0)}


@dataclass(frozen=True)
class Kernel:
    """Symmetric probability kernel ``K_h(u) = k(u / h) / h``."""

    family: str = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in KERNELS:
            raise ValueError(f"kernel family must be one of {sorted(KERNELS)}, got {self.family!r}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")

    @property
    def k(self):
        return KERNELS[self.family]

    def __call__(self, u):
        h = self.bandwidth
        return self.k(np.asarray(u, dtype=float) / h) / h

    @property
    def roughness(self):
        """``int k(u)^2 du``."""
        return _ROUGHNESS[self.family]

    @property
    def second_moment(self):
        return _SECOND_MOMENT[self.family]

    def moments(self):
        """Numerically integrated ``(int k, int u k, int u^2 k)`` of the base kernel."""
        lo, hi = _SUPPORT[self.family]
        k = self.k
        out = []
        for power in (0, 1, 2):
            if np.isinf(hi):
                # split at 0 so the odd moment cancels to quadrature precision
                left = integrate.quad(lambda u: u**power * k(u), -np.inf, 0.0, epsabs=1e-13)[0]
                right = integrate.quad(lambda u: u**power * k(u), 0.0, np.inf, epsabs=1e-13)[0]
            else:
                left = integrate.quad(lambda u: u**power * k(u), lo, 0.0, epsabs=1e-13)[0]
                right = integrate.quad(lambda u: u**power * k(u), 0.0, hi, epsabs=1e-13)[0]
            out.append(left + right)
        return tuple(out)


def default_bandwidth(T):
    """Undersmoothing rule ``h = sd(T) * n**-0.3``."""
    T = np.asarray(T, dtype=float).ravel()
    n = T.size
    if n < 2:
        raise ValueError("bandwidth rule needs at least 2 treatment values")
    sd = float(np.std(T, ddof=1))
    if not sd > 0:
        raise ValueError("treatment has zero variance; cannot choose a bandwidth")
    return sd * n ** (-0.3)
