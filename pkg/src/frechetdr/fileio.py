"""Dataset ingestion, result persistence and plot-data emission.

Two input layouts are understood, both long/wide CSV with a header row:

* life tables: ``unit,age_lo,deaths,treatment,x1..xp[,group]`` with one row
  per (unit, age bin);
* pre-embedded: ``unit,treatment,x1..xp[,group],q1..qM`` with one row per unit.

All floats are written with ``repr`` so that a read-back is exact.
"""

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data import ObservationSet
from .embedding import probability_grid, project_rows
from .errors import DataError

SLOPE_FLOOR = 1e-6
PLOT_COLUMNS = ("t", "p", "value", "lower", "upper", "group", "estimator", "x", "density")


def fmt(x):
    """Round-trip decimal text for a number; empty string for ``None``."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _open_write(path):
    return open(path, "w", newline="", encoding="utf-8")


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise DataError(f"{path} has no header row")
    return [h.strip() for h in header], rows


def _float(value, what):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise DataError(f"{what}: {value!r} is not a number") from None
    if not math.isfinite(out):
        raise DataError(f"{what}: non-finite value {value!r}")
    return out


def _covariate_columns(header):
    cols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    return sorted(cols, key=lambda h: int(h[1:]))


def infer_discrete(X, max_levels=5):
    """Flag columns with at most ``max_levels`` distinct values."""
    return np.array([np.unique(X[:, j]).size <= max_levels for j in range(X.shape[1])], bool)


# ---------------------------------------------------------------------------
# Life tables


@dataclass(frozen=True, eq=False)
class LifeTableRecord:
    unit: str
    age_lo: np.ndarray
    deaths: np.ndarray
    treatment: float
    covariates: np.ndarray
    group: object = None

    def __post_init__(self):
        lo = np.asarray(self.age_lo, float)
        d = np.asarray(self.deaths, float)
        if lo.ndim != 1 or lo.shape != d.shape or lo.size == 0:
            raise DataError(f"unit {self.unit}: age bins and counts must be aligned 1-D arrays")
        if np.any(np.diff(lo) <= 0):
            raise DataError(f"unit {self.unit}: age-bin lower edges must be strictly increasing")
        if np.any(d < 0):
            raise DataError(f"unit {self.unit}: negative death count")
        if not d.sum() > 0:
            raise DataError(f"unit {self.unit}: zero total count")
        object.__setattr__(self, "age_lo", lo)
        object.__setattr__(self, "deaths", d)


def _psi(u):
    # antiderivative of the standard normal CDF
    return u * ndtr(u) + np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)


def smoothed_cdf(age_lo, deaths, a, bandwidth=2.0, age_max=110.0):
    """CDF at ``a`` of the histogram density convolved with a Gaussian kernel.

    Bin ``b`` spans ``[age_lo[b], age_lo[b + 1])``; the last bin ends at
    ``age_max``. The convolution is integrated in closed form; ``bandwidth=0``
    gives the piecewise-linear histogram CDF.
    """
    lo = np.asarray(age_lo, float)
    hi = np.append(lo[1:], age_max)
    if hi[-1] <= lo[-1]:
        raise DataError("age_max must exceed the last age-bin lower edge")
    w = np.asarray(deaths, float)
    w = w / w.sum()
    a = np.asarray(a, float)[..., None]
    if bandwidth == 0:
        frac = np.clip((a - lo) / (hi - lo), 0.0, 1.0)
    else:
        bw = float(bandwidth)
        frac = (bw / (hi - lo)) * (_psi((a - lo) / bw) - _psi((a - hi) / bw))
    return frac @ w


def quantiles_from_cdf(grid, F, p):
    """Generalised inverse of a nondecreasing CDF tabulated on ``grid``, interpolated linearly."""
    if np.any(np.diff(F) < -1e-12):
        raise DataError("CDF is not monotone after integration; input looks pathological")
    F = np.maximum.accumulate(F)
    k = np.clip(np.searchsorted(F, p, side="left"), 1, F.size - 1)
    F0, F1 = F[k - 1], F[k]
    span = F1 - F0
    frac = np.where(span > 0, (p - F0) / np.where(span > 0, span, 1.0), 0.0)
    return grid[k - 1] + np.clip(frac, 0.0, 1.0) * (grid[k] - grid[k - 1])


def life_table_quantiles(record, bandwidth=2.0, M=100, age_min=0.0, age_max=110.0, resolution=0.01):
    """Quantile function of one record's smoothed age-at-death distribution on the probability grid.

    The smoothed density is renormalised to integrate to one over
    ``[age_min, age_max]``.
    """
    if bandwidth < 0:
        raise DataError("smoothing bandwidth must be non-negative")
    if record.age_lo[0] < age_min:
        raise DataError(f"unit {record.unit}: age bins start below age_min={age_min}")
    n_pts = int(round((age_max - age_min) / resolution)) + 1
    grid = np.linspace(age_min, age_max, n_pts)
    # include bin edges so the bandwidth-0 CDF is exact between grid points
    grid = np.union1d(grid, np.append(record.age_lo, age_max))
    F = smoothed_cdf(record.age_lo, record.deaths, grid, bandwidth, age_max)
    mass = F[-1] - F[0]
    if not mass > 0:
        raise DataError(f"unit {record.unit}: no probability mass inside the age range")
    F = (F - F[0]) / mass
    return quantiles_from_cdf(grid, F, probability_grid(M))


def read_life_tables(path):
    header, rows = _read_rows(path)
    need = {"unit", "age_lo", "deaths", "treatment"}
    missing = need - set(header)
    if missing:
        raise DataError(f"{path}: missing life-table columns {sorted(missing)}")
    xcols = _covariate_columns(header)
    has_group = "group" in header
    units = OrderedDict()
    for i, row in enumerate(rows, start=2):
        u = row["unit"]
        where = f"{path} line {i}"
        units.setdefault(u, []).append(
            (
                _float(row["age_lo"], f"{where} age_lo"),
                _float(row["deaths"], f"{where} deaths"),
                _float(row["treatment"], f"{where} treatment"),
                tuple(_float(row[c], f"{where} {c}") for c in xcols),
                row["group"] if has_group else None,
            )
        )
    if not units:
        raise DataError(f"{path}: no data rows")
    records = []
    for u, bins in units.items():
        if len({(b[2], b[3], b[4]) for b in bins}) != 1:
            raise DataError(f"unit {u}: treatment, covariates and group must be constant across its rows")
        bins.sort(key=lambda b: b[0])
        records.append(
            LifeTableRecord(
                unit=u,
                age_lo=np.array([b[0] for b in bins]),
                deaths=np.array([b[1] for b in bins]),
                treatment=bins[0][2],
                covariates=np.array(bins[0][3], float),
                group=bins[0][4],
            )
        )
    return records, tuple(xcols)


def ingest_life_tables(path, bandwidth=2.0, M=100, age_min=0.0, age_max=110.0, discrete=None):
    """Read a life-table CSV and embed each unit's age-at-death distribution."""
    records, xcols = read_life_tables(path)
    V = np.vstack([life_table_quantiles(r, bandwidth, M, age_min, age_max) for r in records])
    return _assemble(records, xcols, V, discrete)


def _assemble(records, xcols, V, discrete):
    X = np.vstack([r.covariates for r in records]) if xcols else np.zeros((len(records), 0))
    if X.shape[1] == 0:
        raise DataError("at least one covariate column x1.. is required")
    groups = None
    if records[0].group is not None:
        groups = np.array([r.group for r in records], dtype=object)
    try:
        return ObservationSet(
            X=X,
            T=np.array([r.treatment for r in records]),
            V=V,
            groups=groups,
            unit_ids=np.array([r.unit for r in records], dtype=object),
            covariate_names=xcols,
            discrete=infer_discrete(X) if discrete is None else discrete,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Pre-embedded outcomes


def read_embedded_csv(path, grid_kind="probability_grid", discrete=None):
    header, rows = _read_rows(path)
    if "unit" not in header or "treatment" not in header:
        raise DataError(f"{path}: embedded CSV needs 'unit' and 'treatment' columns")
    xcols = _covariate_columns(header)
    qcols = sorted((h for h in header if h.startswith("q") and h[1:].isdigit()), key=lambda h: int(h[1:]))
    if len(qcols) < 2:
        raise DataError(f"{path}: need at least two outcome columns q1..qM")
    if not rows:
        raise DataError(f"{path}: no data rows")
    has_group = "group" in header

    class _Rec:
        pass

    records, V = [], []
    for i, row in enumerate(rows, start=2):
        where = f"{path} line {i}"
        r = _Rec()
        r.unit = row["unit"]
        r.treatment = _float(row["treatment"], f"{where} treatment")
        r.covariates = np.array([_float(row[c], f"{where} {c}") for c in xcols])
        r.group = row["group"] if has_group else None
        records.append(r)
        V.append([_float(row[c], f"{where} {c}") for c in qcols])
    V = np.array(V)
    if grid_kind == "probability_grid" and np.any(np.diff(V, axis=1) < 0):
        bad = int(np.flatnonzero(np.any(np.diff(V, axis=1) < 0, axis=1))[0])
        raise DataError(f"{path}: unit {records[bad].unit} has a decreasing quantile vector")
    data = _assemble(records, tuple(xcols), V, discrete)
    if grid_kind != "probability_grid":
        data = ObservationSet(X=data.X, T=data.T, V=data.V, grid_kind=grid_kind, groups=data.groups,
                              unit_ids=data.unit_ids, covariate_names=data.covariate_names,
                              discrete=data.discrete)
    return data


def write_embedded_csv(data, path):
    header = ["unit", "treatment", *data.covariate_names]
    if data.groups is not None:
        header.append("group")
    header += [f"q{j + 1}" for j in range(data.M)]
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [str(data.unit_ids[i]), fmt(data.T[i]), *map(fmt, data.X[i])]
            if data.groups is not None:
                row.append(str(data.groups[i]))
            row += list(map(fmt, data.V[i]))
            w.writerow(row)


# ---------------------------------------------------------------------------
# Results


def quantile_density(q, p=None, floor=SLOPE_FLOOR):
    """Density at each quantile ``q_j`` as the reciprocal slope ``1 / max(dq/dp, floor)``."""
    q = np.asarray(q, float)
    p = probability_grid(q.size) if p is None else np.asarray(p, float)
    slope = np.gradient(q, p)
    return 1.0 / np.maximum(slope, floor)


def _plot_rows(t_grid, center, lower, upper, grid_kind, group, estimator):
    M = center.shape[1]
    p = probability_grid(M)
    rows = []
    proj = project_rows(center, grid_kind) if grid_kind == "probability_grid" else center
    for i, t in enumerate(t_grid):
        dens = quantile_density(proj[i], p) if grid_kind == "probability_grid" else [None] * M
        for j in range(M):
            rows.append(
                [
                    fmt(t),
                    fmt(p[j]) if grid_kind == "probability_grid" else fmt(j + 1),
                    fmt(center[i, j]),
                    fmt(None if lower is None else lower[i, j]),
                    fmt(None if upper is None else upper[i, j]),
                    "" if group is None else str(group),
                    estimator,
                    fmt(proj[i, j]),
                    fmt(dens[j]),
                ]
            )
    return rows


def plot_rows(obj, group=None, estimator=None):
    """Long-format rows for a dose-response estimate or an asymptotic band.

    ``x`` holds the pulled-back quantile and ``density`` the matching density
    value; ``lower``/``upper`` are empty for bare estimates.
    """
    if hasattr(obj, "lower") and hasattr(obj, "center"):
        return _plot_rows(obj.t_grid, obj.center, obj.lower, obj.upper, obj.grid_kind, group,
                          estimator or "band")
    if hasattr(obj, "theta"):
        return _plot_rows(obj.t_grid, obj.theta, None, None, obj.grid_kind, group,
                          estimator or obj.estimator_tag)
    raise TypeError(f"cannot emit plot data for {type(obj).__name__}")


def emit_plot_data(obj, path, group=None, estimator=None):
    """Write plot data for an estimate, band, ``{group: estimate}`` mapping or Monte Carlo report."""
    if hasattr(obj, "rows") and hasattr(obj, "summary"):
        return write_mc_report(obj, path)
    if isinstance(obj, dict):
        rows = []
        for g, item in obj.items():
            rows += plot_rows(item, g, estimator)
    else:
        rows = plot_rows(obj, group, estimator)
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        w.writerows(rows)
    return [path]


def write_mc_report(report, path_prefix):
    """``<prefix>_replications.csv``, ``<prefix>_summary.csv`` and ``<prefix>_summary.json``."""
    metrics = sorted({k for r in report.rows for k in r} - {"replication", "estimator", "error", "theta_p"})
    rep_path = f"{path_prefix}_replications.csv"
    with _open_write(rep_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "estimator", *metrics, "error"])
        for r in report.rows:
            w.writerow([r["replication"], r["estimator"], *(fmt(r.get(m)) for m in metrics),
                        r.get("error") or ""])
    sum_path = f"{path_prefix}_summary.csv"
    summary = report.summary_rows()
    with _open_write(sum_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "metric", "mean", "sd", "count", "failed"])
        for s in summary:
            w.writerow([s["estimator"], s["metric"], fmt(s["mean"]), "NA" if s["sd"] is None else fmt(s["sd"]),
                        s["count"], report.failures.get(s["estimator"], 0)])
    json_path = f"{path_prefix}_summary.json"
    write_json({"B_mc": report.B_mc, "summary": summary, "failures": report.failures}, json_path)
    return [rep_path, sum_path, json_path]


def write_effect_maps(maps, path):
    """Rows ``(group, t_low, t_high, p, delta)`` plus the H-norm magnitude per contrast."""
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "t_low", "t_high", "p", "delta", "magnitude"])
        for group, m in maps:
            delta = np.asarray(getattr(m.delta, "values", m.delta), float)
            p = probability_grid(delta.size)
            for j in range(delta.size):
                w.writerow(["" if group is None else str(group), fmt(m.t_low), fmt(m.t_high),
                            fmt(p[j]), fmt(delta[j]), fmt(m.magnitude)])
    return [path]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(obj, path):
    # json emits floats via repr, so values round-trip
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [path]
