"""Aligned observation columns."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import check_xtv
from .embedding import GRID_KINDS


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Covariates ``X`` (n, p), treatment ``T`` (n,), embedded outcomes ``V`` (n, M).

    ``discrete`` flags covariate columns that take few values; kernel-based
    nuisance estimators use exact matching on them.
    """

    X: np.ndarray
    T: np.ndarray
    V: np.ndarray
    grid_kind: str = "probability_grid"
    groups: Optional[np.ndarray] = None
    unit_ids: Optional[np.ndarray] = None
    covariate_names: Optional[tuple] = None
    discrete: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        X, T, V = check_xtv(self.X, self.T, self.V)
        if self.grid_kind not in GRID_KINDS:
            raise ValueError(f"unknown grid_kind {self.grid_kind!r}")
        if V.shape[1] < 2:
            raise ValueError("embedded outcomes need at least 2 coordinates")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "V", V)
        n, p = X.shape
        if self.groups is not None:
            g = np.asarray(self.groups)
            if g.shape != (n,):
                raise ValueError("groups must have one label per unit")
            object.__setattr__(self, "groups", g)
        if self.unit_ids is None:
            object.__setattr__(self, "unit_ids", np.array([str(i) for i in range(n)]))
        if self.covariate_names is None:
            object.__setattr__(self, "covariate_names", tuple(f"x{j + 1}" for j in range(p)))
        elif len(self.covariate_names) != p:
            raise ValueError("covariate_names must have one entry per column of X")
        disc = np.zeros(p, dtype=bool) if self.discrete is None else np.asarray(self.discrete, bool)
        if disc.shape != (p,):
            raise ValueError("discrete must be a boolean mask over the columns of X")
        object.__setattr__(self, "discrete", disc)

    @property
    def n(self):
        return self.T.size

    @property
    def M(self):
        return self.V.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return ObservationSet(
            X=self.X[idx],
            T=self.T[idx],
            V=self.V[idx],
            grid_kind=self.grid_kind,
            groups=None if self.groups is None else self.groups[idx],
            unit_ids=self.unit_ids[idx],
            covariate_names=self.covariate_names,
            discrete=self.discrete,
        )

    def by_group(self):
        """Yield ``(label, ObservationSet)`` per group, in sorted label order."""
        if self.groups is None:
            yield None, self
            return
        for g in sorted(set(self.groups.tolist()), key=str):
            yield g, self.subset(np.flatnonzero(self.groups == g))
