"""Outcome metric spaces and their isometric embeddings into a Hilbert space.

Each supported outcome type has an explicit linear isometry ``rho``:

* quantile functions (Wasserstein-2)  -> values on the probability grid, L2[0, 1]
* SPD matrices (Frobenius)            -> the K*K matrix entries
* unit-sphere points (chordal metric) -> ambient coordinates

Spaces that only come with a metric of negative type are handled by
:func:`build_empirical_embedding`, which factorises the Aronszajn kernel of the
squared metric over an in-sample set of anchors.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

GRID_KINDS = ("probability_grid", "matrix_coords", "ambient_coords", "empirical_feature")

# Sentinel tolerances; see ``SPDMatrix`` and ``SpherePoint``.
_SYM_TOL = 1e-10
_UNIT_TOL = 1e-10


def probability_grid(M=100):
    """Midpoint grid ``p_j = (j - 1/2) / M`` for ``j = 1..M``."""
    if M < 2:
        raise ValueError("probability grid needs M >= 2")
    return (np.arange(1, M + 1) - 0.5) / M


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HilbertVector:
    """A discretised element of the latent Hilbert space.

    For ``probability_grid`` the inner product is the midpoint quadrature of
    ``int_0^1 u(p) v(p) dp``; every other grid kind uses the plain dot product.
    """

    values: np.ndarray
    grid_kind: str = "probability_grid"

    def __post_init__(self):
        if self.grid_kind not in GRID_KINDS:
            raise ValueError(f"unknown grid_kind {self.grid_kind!r}")
        values = _readonly(self.values).ravel()
        if values.size < 2:
            raise ValueError("a HilbertVector needs at least 2 coordinates")
        object.__setattr__(self, "values", values)

    @property
    def M(self):
        return self.values.size

    @property
    def weight(self):
        return inner_weight(self.grid_kind, self.M)

    def _check_compatible(self, other):
        if not isinstance(other, HilbertVector):
            raise TypeError(f"expected HilbertVector, got {type(other).__name__}")
        if other.grid_kind != self.grid_kind or other.M != self.M:
            raise ValueError(
                f"grid mismatch: {self.grid_kind}[{self.M}] vs {other.grid_kind}[{other.M}]"
            )

    def inner(self, other):
        self._check_compatible(other)
        return float(self.weight * np.dot(self.values, other.values))

    def norm(self):
        return float(np.sqrt(self.inner(self)))

    def __add__(self, other):
        self._check_compatible(other)
        return HilbertVector(self.values + other.values, self.grid_kind)

    def __sub__(self, other):
        self._check_compatible(other)
        return HilbertVector(self.values - other.values, self.grid_kind)

    def __neg__(self):
        return HilbertVector(-self.values, self.grid_kind)

    def __mul__(self, scalar):
        return HilbertVector(float(scalar) * self.values, self.grid_kind)

    __rmul__ = __mul__

    def __repr__(self):
        return f"HilbertVector(M={self.M}, grid_kind={self.grid_kind!r})"


def inner_weight(grid_kind, M):
    """Quadrature weight of the inner product for a grid kind."""
    return 1.0 / M if grid_kind == "probability_grid" else 1.0


def hilbert_norm(values, grid_kind="probability_grid", axis=-1):
    """Vectorised H-norm of raw coordinate arrays along ``axis``."""
    values = np.asarray(values, dtype=float)
    w = inner_weight(grid_kind, values.shape[axis])
    return np.sqrt(w * np.sum(values**2, axis=axis))


# ---------------------------------------------------------------------------
# Outcome objects


@dataclass(frozen=True, eq=False)
class QuantileFunction:
    """Quantile function sampled on the midpoint probability grid."""

    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values).ravel()
        if values.size < 2:
            raise ValueError("a quantile function needs at least 2 grid points")
        if not np.all(np.isfinite(values)):
            raise ValueError("quantile values must be finite")
        if np.any(np.diff(values) < 0):
            raise ValueError("quantile values must be nondecreasing")
        object.__setattr__(self, "values", values)

    @property
    def grid(self):
        return probability_grid(self.values.size)


@dataclass(frozen=True, eq=False)
class SPDMatrix:
    """Symmetric positive semi-definite K x K matrix."""

    entries: np.ndarray

    def __post_init__(self):
        A = _readonly(self.entries)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"SPD matrix must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("matrix entries must be finite")
        if np.max(np.abs(A - A.T), initial=0.0) > _SYM_TOL:
            raise ValueError("matrix is not symmetric")
        lam = np.linalg.eigvalsh((A + A.T) / 2)
        scale = max(1.0, float(np.max(np.abs(lam))))
        if lam[0] < -_SYM_TOL * scale:
            raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {lam[0]:.3g})")
        object.__setattr__(self, "entries", A)


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """Unit vector in R^q; ``compositional=True`` additionally requires coords >= 0."""

    coords: np.ndarray
    compositional: bool = False

    def __post_init__(self):
        x = _readonly(self.coords).ravel()
        if x.size < 2:
            raise ValueError("sphere points need at least 2 coordinates")
        if abs(np.linalg.norm(x) - 1.0) > _UNIT_TOL:
            raise ValueError("sphere coordinates must have unit norm")
        if self.compositional and np.any(x < 0):
            raise ValueError("compositional sphere points must be nonnegative")
        object.__setattr__(self, "coords", x)


_GRID_OF = {
    QuantileFunction: "probability_grid",
    SPDMatrix: "matrix_coords",
    SpherePoint: "ambient_coords",
}


def grid_kind_of(obj):
    try:
        return _GRID_OF[type(obj)]
    except KeyError:
        raise TypeError(f"no direct embedding for {type(obj).__name__}") from None


def embed(obj):
    """Map an outcome object to its Hilbert-space representative."""
    if isinstance(obj, QuantileFunction):
        return HilbertVector(obj.values, "probability_grid")
    if isinstance(obj, SPDMatrix):
        return HilbertVector(obj.entries.ravel(), "matrix_coords")
    if isinstance(obj, SpherePoint):
        return HilbertVector(obj.coords, "ambient_coords")
    raise TypeError(f"no direct embedding for {type(obj).__name__}")


def distance(a, b):
    """Metric of the outcome space.

    Wasserstein-2 for quantile functions, Frobenius for SPD matrices and the
    chordal distance for sphere points. Use :func:`geodesic_distance` together
    with :func:`build_empirical_embedding` for the great-circle metric.
    """
    if type(a) is not type(b):
        raise TypeError(f"type mismatch: {type(a).__name__} vs {type(b).__name__}")
    if isinstance(a, QuantileFunction):
        if a.values.size != b.values.size:
            raise ValueError("quantile functions live on different grids")
        return float(np.sqrt(np.mean((a.values - b.values) ** 2)))
    if isinstance(a, SPDMatrix):
        if a.entries.shape != b.entries.shape:
            raise ValueError("matrices have different sizes")
        return float(np.linalg.norm(a.entries - b.entries))
    if isinstance(a, SpherePoint):
        if a.coords.size != b.coords.size:
            raise ValueError("sphere points have different dimensions")
        return float(np.linalg.norm(a.coords - b.coords))
    raise TypeError(f"no metric for {type(a).__name__}")


def geodesic_distance(a, b):
    """Great-circle distance between two sphere points."""
    # half-angle form stays accurate near 0 and pi, unlike arccos of the dot product
    return float(2.0 * np.arctan2(np.linalg.norm(a.coords - b.coords), np.linalg.norm(a.coords + b.coords)))


# ---------------------------------------------------------------------------
# Projection onto the image and pull-back


def pava(y, weights=None):
    """Isotonic (nondecreasing) least-squares fit by pool adjacent violators."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != y.shape:
        raise ValueError("weights must match y")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    # Block stacks: weighted mean, total weight, length.
    means = np.empty(n)
    wsum = np.empty(n)
    size = np.empty(n, dtype=int)
    top = -1
    for i in range(n):
        top += 1
        means[top], wsum[top], size[top] = y[i], w[i], 1
        while top > 0 and means[top - 1] > means[top]:
            wt = wsum[top - 1] + wsum[top]
            means[top - 1] = (wsum[top - 1] * means[top - 1] + wsum[top] * means[top]) / wt
            wsum[top - 1] = wt
            size[top - 1] += size[top]
            top -= 1
    return np.repeat(means[: top + 1], size[: top + 1])


def nearest_psd(A):
    """Nearest symmetric PSD matrix in Frobenius norm (eigenvalue clipping)."""
    A = np.asarray(A, dtype=float)
    S = (A + A.T) / 2
    lam, U = np.linalg.eigh(S)
    out = (U * np.clip(lam, 0.0, None)) @ U.T
    return (out + out.T) / 2


def project_to_image(v, target=None):
    """Nearest point of the embedded outcome space to ``v``.

    Parameters
    ----------
    v : HilbertVector
    target : str, optional
        Grid kind of the image; defaults to ``v.grid_kind``.
    """
    target = target or v.grid_kind
    x = v.values
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project a non-finite vector")
    if target == "probability_grid":
        return HilbertVector(pava(x), target)
    if target == "matrix_coords":
        K = int(round(np.sqrt(x.size)))
        if K * K != x.size:
            raise ValueError(f"{x.size} coordinates do not form a square matrix")
        return HilbertVector(nearest_psd(x.reshape(K, K)).ravel(), target)
    if target == "ambient_coords":
        nrm = np.linalg.norm(x)
        if nrm == 0:
            raise ValueError("zero vector has no unique nearest sphere point")
        return HilbertVector(x / nrm, target)
    raise ValueError(f"no projection available onto the image of {target!r}")


def pull_back(v, target=None):
    """Inverse embedding of the projection of ``v``: an outcome object."""
    target = target or v.grid_kind
    p = project_to_image(v, target)
    if target == "probability_grid":
        return QuantileFunction(p.values)
    if target == "matrix_coords":
        K = int(round(np.sqrt(p.M)))
        A = p.values.reshape(K, K)
        return SPDMatrix((A + A.T) / 2)
    # ambient_coords; renormalise to absorb rounding in the division
    x = p.values / np.linalg.norm(p.values)
    return SpherePoint(x)


def project_rows(values, grid_kind="probability_grid"):
    """Row-wise :func:`project_to_image` on a raw (k, M) array."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return np.vstack([project_to_image(HilbertVector(r, grid_kind)).values for r in values])


# ---------------------------------------------------------------------------
# Empirical (Aronszajn) embedding


@dataclass(frozen=True, eq=False)
class EmpiricalEmbedding:
    """In-sample feature map of a negative-type metric.

    ``gram[i, j] = (d2(y_i, z0) + d2(y_j, z0) - d2(y_i, y_j)) / 2`` with ``z0``
    the anchor at ``base_point_index``; ``factor`` holds one feature row per
    anchor so that ``factor @ factor.T`` reconstructs ``gram``.
    """

    anchors: Sequence
    base_point_index: int
    gram: np.ndarray
    factor: np.ndarray
    eig_floor: float
    min_clipped_eigenvalue: float = 0.0
    reconstruction_error: float = 0.0
    sq_dist: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tolerance(self):
        return max(self.eig_floor * len(self.anchors), 1e-8)

    def embed_index(self, i):
        return HilbertVector(self.factor[i], "empirical_feature")

    def feature_distances(self):
        F = self.factor
        sq = np.sum(F**2, axis=1)
        D2 = np.clip(sq[:, None] + sq[None, :] - 2 * F @ F.T, 0.0, None)
        return np.sqrt(D2)


def build_empirical_embedding(
    sample: Sequence,
    metric: Callable,
    base_point_index: int = 0,
    eig_floor: Optional[float] = None,
):
    """Factorise the Aronszajn kernel of the squared metric over ``sample``.

    The kernel is built from ``d**2`` so that feature distances reproduce
    ``d`` itself. Eigenvalues below ``eig_floor`` (default ``1e-10`` times the
    largest eigenvalue) are dropped; a warning is issued when the dropped
    negative part exceeds ``1e-6`` of the trace, since that means ``d**2`` is
    not of negative type on this sample.
    """
    sample = list(sample)
    n = len(sample)
    if n < 2:
        raise ValueError("empirical embedding needs at least 2 objects")
    if not 0 <= base_point_index < n:
        raise ValueError("base_point_index out of range")
    D = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = metric(sample[i], sample[j])
    if np.max(np.abs(np.diag(D))) > 1e-12:
        raise ValueError("metric does not vanish on the diagonal")
    if np.max(np.abs(D - D.T)) > 1e-10 * max(1.0, np.max(np.abs(D))):
        raise ValueError("metric is not symmetric")
    D2 = D**2
    z = base_point_index
    gram = 0.5 * (D2[:, [z]] + D2[[z], :] - D2)
    gram = (gram + gram.T) / 2
    gram[z, :] = 0.0
    gram[:, z] = 0.0

    lam, U = np.linalg.eigh(gram)
    lam_max = lam[-1]
    if lam_max <= 0:
        raise ValueError("degenerate sample: gram matrix has no positive eigenvalue")
    floor = 1e-10 * lam_max if eig_floor is None else float(eig_floor)
    keep = lam > floor
    if not np.any(keep):
        raise ValueError("degenerate sample: all eigenvalues clipped")
    clipped = lam[~keep]
    min_clipped = float(clipped.min()) if clipped.size else 0.0
    trace = float(np.sum(np.abs(lam)))
    if min_clipped < -1e-6 * trace:
        warnings.warn(
            f"gram eigenvalue {min_clipped:.3g} < 0: the squared metric may not be "
            "of negative type on this sample",
            RuntimeWarning,
            stacklevel=2,
        )
    factor = U[:, keep] * np.sqrt(lam[keep])
    recon = float(np.linalg.norm(factor @ factor.T - gram))
    return EmpiricalEmbedding(
        anchors=tuple(sample),
        base_point_index=z,
        gram=_readonly(gram),
        factor=_readonly(factor),
        eig_floor=floor,
        min_clipped_eigenvalue=min_clipped,
        reconstruction_error=recon,
        sq_dist=_readonly(D2),
    )
