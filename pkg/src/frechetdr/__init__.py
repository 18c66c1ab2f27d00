"""Doubly robust dose-response estimation for outcomes in metric spaces.

Outcomes are mapped into a Hilbert space (quantile functions for
distributions, entries for SPD matrices, ambient coordinates for sphere
points), dose-response curves are estimated there, and estimates are pulled
back by projecting onto the image of the outcome space.
"""

__version__ = "0.1.0"

from .data import ObservationSet
from .embedding import (
    EmpiricalEmbedding,
    HilbertVector,
    QuantileFunction,
    SPDMatrix,
    SpherePoint,
    build_empirical_embedding,
    distance,
    embed,
    probability_grid,
    project_to_image,
    pull_back,
)
from .estimators import (
    CrossFit,
    DoseResponseEstimate,
    DoublyRobust,
    FoldPlan,
    IPW,
    OutcomeRegression,
    estimate_cf,
    estimate_dr,
    estimate_ipw,
    estimate_or,
    make_fold_plan,
)
from .frechet import effect_map, frechet_mean, weighted_frechet_mean
from .inference import asymptotic_band, hulc_B, hulc_interval
from .kernels import Kernel, default_bandwidth
from .nuisance import (
    ConstantGPS,
    ConstantOutcome,
    GlobalBasisOutcome,
    KernelConditionalGPS,
    LinearGaussianGPS,
    LocalLinearOutcome,
    fit_gps,
    fit_outcome,
)
from .simlab import DgpSpec, McReport, run_monte_carlo, simulate, true_theta

__all__ = [
    "ObservationSet", "EmpiricalEmbedding", "HilbertVector", "QuantileFunction", "SPDMatrix",
    "SpherePoint", "build_empirical_embedding", "distance", "embed", "probability_grid",
    "project_to_image", "pull_back", "CrossFit", "DoseResponseEstimate", "DoublyRobust",
    "FoldPlan", "IPW", "OutcomeRegression", "estimate_cf", "estimate_dr", "estimate_ipw",
    "estimate_or", "make_fold_plan", "effect_map", "frechet_mean", "weighted_frechet_mean",
    "asymptotic_band", "hulc_B", "hulc_interval", "Kernel", "default_bandwidth", "ConstantGPS",
    "ConstantOutcome", "GlobalBasisOutcome", "KernelConditionalGPS", "LinearGaussianGPS",
    "LocalLinearOutcome", "fit_gps", "fit_outcome", "DgpSpec", "McReport", "run_monte_carlo",
    "simulate", "true_theta",
]
