"""Fréchet means and causal effect maps computed through the embedding."""

from dataclasses import dataclass

import numpy as np

from .embedding import (
    HilbertVector,
    distance,
    embed,
    grid_kind_of,
    project_to_image,
    pull_back,
)


@dataclass(frozen=True, eq=False)
class FrechetMeanResult:
    mean_embedded: HilbertVector
    mean_object: object
    objective: float


@dataclass(frozen=True, eq=False)
class EffectMap:
    """Difference ``theta_high - theta_low`` between two treatment levels."""

    t_low: float
    t_high: float
    delta: HilbertVector
    magnitude: float


def frechet_objective(sample, candidate, weights=None):
    """Weighted mean of squared distances from ``candidate`` to the sample."""
    d2 = np.array([distance(y, candidate) ** 2 for y in sample])
    if weights is None:
        return float(d2.mean())
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w, d2) / w.sum())


def weighted_frechet_mean(sample, weights):
    """Fréchet mean under nonnegative weights.

    The weighted average of the embeddings is projected onto the image of the
    outcome space and pulled back; by convexity of the image this is the
    minimiser of the weighted Fréchet objective.
    """
    sample = list(sample)
    if not sample:
        raise ValueError("empty sample")
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != len(sample):
        raise ValueError("weights must have one entry per object")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not w.sum() > 0:
        raise ValueError("weights must not all be zero")
    kinds = {type(y) for y in sample}
    if len(kinds) > 1:
        raise TypeError("sample mixes object types")
    kind = grid_kind_of(sample[0])
    V = np.vstack([embed(y).values for y in sample])
    avg = HilbertVector(w @ V / w.sum(), kind)
    mean_embedded = project_to_image(avg)
    mean_object = pull_back(mean_embedded)
    return FrechetMeanResult(
        mean_embedded=mean_embedded,
        mean_object=mean_object,
        objective=frechet_objective(sample, mean_object, w),
    )


def frechet_mean(sample):
    sample = list(sample)
    if not sample:
        raise ValueError("empty sample")
    return weighted_frechet_mean(sample, np.ones(len(sample)))


def effect_map(theta_low, theta_high, t_low, t_high):
    delta = theta_high - theta_low
    return EffectMap(float(t_low), float(t_high), delta, delta.norm())
