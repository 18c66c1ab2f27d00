import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from fixtures.lifetables import make_life_tables, write_life_tables
from frechetdr.embedding import HilbertVector, QuantileFunction, distance, probability_grid
from frechetdr.errors import DataError
from frechetdr.estimators import DoseResponseEstimate, OutcomeRegression
from frechetdr.fileio import (
    PLOT_COLUMNS,
    LifeTableRecord,
    emit_plot_data,
    fmt,
    infer_discrete,
    ingest_life_tables,
    life_table_quantiles,
    quantile_density,
    read_embedded_csv,
    smoothed_cdf,
    write_effect_maps,
    write_embedded_csv,
    write_json,
    write_mc_report,
)
from frechetdr.frechet import effect_map
from frechetdr.inference import asymptotic_band
from frechetdr.simlab import DgpSpec, run_monte_carlo, simulate, true_theta

EDGES = np.arange(0.0, 110.0, 5.0)


def record(deaths, edges=EDGES, unit="u"):
    return LifeTableRecord(unit, edges, np.asarray(deaths, float), 0.0, np.zeros(1))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Life-table pipeline


def test_single_bin_support():
    bw = 2.0
    for k in (3, 10, 15):
        d = np.zeros(EDGES.size)
        d[k] = 100
        q = life_table_quantiles(record(d), bandwidth=bw, M=100)
        a = EDGES[k]
        assert q.min() >= a - 3 * bw and q.max() <= a + 5 + 3 * bw


def test_identical_records_embed_identically():
    d = np.random.default_rng(0).integers(0, 50, EDGES.size)
    a = life_table_quantiles(record(d, unit="a"))
    b = life_table_quantiles(record(d, unit="b"))
    assert np.array_equal(a, b)
    assert distance(QuantileFunction(a), QuantileFunction(b)) == 0.0


def test_uniform_counts_median():
    edges = np.arange(0.0, 100.0, 5.0)
    q = life_table_quantiles(record(np.ones(edges.size), edges), bandwidth=0.0, M=101, age_max=100.0)
    assert abs(q[50] - 50.0) <= 0.5
    # without smoothing the whole quantile function is that of U(0, 100)
    assert np.allclose(q, 100 * probability_grid(101), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 6.0), st.floats(-10, 120), st.integers(0, 1000))
def test_smoothed_cdf_matches_numeric_convolution(bw, a, seed):
    w = np.random.default_rng(seed).integers(0, 20, 6).astype(float)
    w[0] += 1
    lo = np.array([0.0, 5, 10, 30, 60, 80])
    hi = np.append(lo[1:], 110.0)
    dens = w / w.sum() / (hi - lo)
    oracle = sum(d * integrate.quad(lambda x: norm.cdf((a - x) / bw), l, h)[0]
                 for d, l, h in zip(dens, lo, hi))
    assert smoothed_cdf(lo, w, a, bw) == pytest.approx(oracle, abs=1e-9)


def test_scale_invariance():
    d = np.random.default_rng(3).integers(1, 90, EDGES.size)
    a = life_table_quantiles(record(d))
    b = life_table_quantiles(record(d * 7.25))
    assert np.allclose(a, b, atol=1e-12)


def test_boundary_renormalisation_keeps_range():
    d = np.zeros(EDGES.size)
    d[0] = d[-1] = 10
    q = life_table_quantiles(record(d), bandwidth=4.0)
    assert q.min() >= 0.0 and q.max() <= 110.0
    assert np.all(np.diff(q) >= 0)


@pytest.mark.parametrize("bad", [
    dict(deaths=np.zeros(EDGES.size)),
    dict(deaths=-np.ones(EDGES.size)),
    dict(edges=EDGES[::-1]),
    dict(deaths=np.ones(3)),
])
def test_record_validation(bad):
    with pytest.raises(DataError):
        LifeTableRecord("u", bad.get("edges", EDGES), bad.get("deaths", np.ones(EDGES.size)), 0.0,
                        np.zeros(1))


def test_ingest_fixture(tmp_path):
    path = tmp_path / "lt.csv"
    write_life_tables(path, make_life_tables(n_units=12, seed=1))
    data = ingest_life_tables(path, M=50)
    assert data.n == 12 and data.M == 50
    assert data.covariate_names == ("x1", "x2", "x3")
    assert set(data.groups) == {"urban", "rural"}
    assert np.all(np.diff(data.V, axis=1) >= 0)


def test_ingest_errors(tmp_path):
    rows = make_life_tables(n_units=2, seed=0)
    rows[1]["treatment"] = 99.0
    p = tmp_path / "bad.csv"
    write_life_tables(p, rows)
    with pytest.raises(DataError, match="constant"):
        ingest_life_tables(p)
    rows = make_life_tables(n_units=2, seed=0)
    rows[0]["deaths"] = "many"
    write_life_tables(p, rows)
    with pytest.raises(DataError, match="not a number"):
        ingest_life_tables(p)
    p.write_text("unit,age_lo,deaths\nA,0,1\n")
    with pytest.raises(DataError, match="missing"):
        ingest_life_tables(p)
    with pytest.raises(DataError):
        ingest_life_tables(tmp_path / "absent.csv")


def test_infer_discrete():
    X = np.column_stack([np.tile([0.0, 1.0], 10), np.arange(20.0)])
    assert list(infer_discrete(X)) == [True, False]


# ---------------------------------------------------------------------------
# Embedded CSV


def test_embedded_round_trip(tmp_path):
    d = simulate(DgpSpec(n=30, seed=2, M=12))
    p = tmp_path / "emb.csv"
    write_embedded_csv(d, p)
    back = read_embedded_csv(p)
    assert np.array_equal(back.V, d.V) and np.array_equal(back.X, d.X) and np.array_equal(back.T, d.T)
    assert np.max(np.abs(back.V - d.V)) <= 1e-12


def test_embedded_rejects_decreasing(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("unit,treatment,x1,q1,q2\na,0.5,1.0,2.0,1.0\n")
    with pytest.raises(DataError, match="decreasing"):
        read_embedded_csv(p)
    p.write_text("unit,treatment,x1,q1\na,0.5,1.0,2.0\n")
    with pytest.raises(DataError):
        read_embedded_csv(p)


# ---------------------------------------------------------------------------
# Plot data and reports


def _truth_estimate(t, M):
    return DoseResponseEstimate(t_grid=np.asarray(t, float), theta=true_theta(t, M=M),
                                pointwise_se=np.zeros((len(t), M)), estimator_tag="truth", n=1)


def test_density_column_matches_normal(tmp_path):
    p = tmp_path / "plot.csv"
    emit_plot_data(_truth_estimate([0.0], 400), p)
    rows = read_csv(p)
    x = np.array([float(r["x"]) for r in rows])
    dens = np.array([float(r["density"]) for r in rows])
    assert np.max(np.abs(dens - norm.pdf(x, loc=1.0))) <= 0.01


def test_quantile_density_slope_floor():
    assert np.all(quantile_density(np.zeros(5)) == 1e6)


def test_row_counts_per_group(tmp_path):
    d = simulate(DgpSpec(n=200, seed=1, M=7))
    est = OutcomeRegression().fit(d.X, d.T, d.V).estimate([0.5, 1.0, 1.5])
    p = tmp_path / "g.csv"
    emit_plot_data({"a": est, "b": est}, p)
    rows = read_csv(p)
    assert list(rows[0]) == list(PLOT_COLUMNS)
    assert len(rows) == 2 * 3 * 7
    assert {r["group"] for r in rows} == {"a", "b"}
    assert all(r["lower"] == "" for r in rows)


def test_zero_width_band_rows(tmp_path):
    band = asymptotic_band(_truth_estimate([0.0, 2.0], 5))
    p = tmp_path / "band.csv"
    emit_plot_data(band, p, estimator="cf")
    for r in read_csv(p):
        assert r["lower"] == r["upper"] == r["value"]
        assert r["estimator"] == "cf"


def test_emit_rejects_unknown_objects(tmp_path):
    with pytest.raises(TypeError):
        emit_plot_data(object(), tmp_path / "x.csv")


def test_mc_report_files(tmp_path):
    rep = run_monte_carlo(DgpSpec(n=100, seed=0, M=5), {"or": OutcomeRegression()}, B_mc=1)
    files = write_mc_report(rep, str(tmp_path / "mc"))
    assert [f.rsplit("_", 1)[1] for f in files] == ["replications.csv", "summary.csv", "summary.json"]
    summary = read_csv(files[1])
    assert summary[0]["sd"] == "NA" and summary[0]["count"] == "1"
    assert float(summary[0]["mean"]) == rep.summary[("or", "mise")]["mean"]
    assert json.loads(open(files[2]).read())["B_mc"] == 1


def test_effect_map_rows(tmp_path):
    m = effect_map(HilbertVector([0.0, 1.0, 2.0]), HilbertVector([1.0, 2.0, 3.0]), 0.0, 1.0)
    p = tmp_path / "maps.csv"
    write_effect_maps([(None, m), ("g", m)], p)
    rows = read_csv(p)
    assert len(rows) == 6
    assert all(float(r["delta"]) == 1.0 and float(r["magnitude"]) == 1.0 for r in rows)


def test_fmt_and_json(tmp_path):
    assert fmt(None) == "" and fmt(3) == "3" and fmt(True) == "1"
    assert float(fmt(0.1 + 0.2)) == 0.1 + 0.2
    p = tmp_path / "o.json"
    write_json({"a": np.array([1.5, np.inf]), "b": np.int64(2)}, p)
    assert json.loads(p.read_text()) == {"a": [1.5, None], "b": 2}
