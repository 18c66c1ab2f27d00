"""Command-line interface: ``frechetdr {simulate,estimate,infer,ingest-check}``.

Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
4 numerical failure. Failures also leave ``error.json`` in the output
directory.
"""

import argparse
import hashlib
import itertools
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, parse_override, reference_text, resolve
from .embedding import HilbertVector
from .errors import DataError, NumericalError
from .estimators import CrossFit, DoublyRobust, FoldFitError, IPW, OutcomeRegression
from .fileio import (
    emit_plot_data,
    fmt,
    ingest_life_tables,
    read_embedded_csv,
    write_effect_maps,
    write_embedded_csv,
    write_json,
)
from .frechet import effect_map
from .inference import asymptotic_band, hulc_interval
from .nuisance import make_gps, make_outcome
from .simlab import DISCRETE_COLUMNS, DgpSpec, default_t_grid, run_monte_carlo, simulate

VERBS = ("simulate", "estimate", "infer", "ingest-check")


# ---------------------------------------------------------------------------
# Building blocks from a resolved config


def build_gps(cfg, discrete=None):
    g = cfg["gps"]
    if g["kind"] == "kernel_conditional":
        return make_gps("kernel_conditional", bandwidth=g["bandwidths"]["treatment"],
                        covariate_bandwidths=g["bandwidths"]["covariates"], discrete=discrete,
                        floor=g["floor"])
    return make_gps(g["kind"], floor=g["floor"])


def build_outcome(cfg):
    o = cfg["outcome"]
    if o["kind"] == "global_basis":
        return make_outcome("global_basis", model_a_basis=o["model_a_basis"],
                            use_covariates=o["use_covariates"])
    if o["kind"] == "local_linear":
        return make_outcome("local_linear", bandwidth=o["bandwidth"], kernel=cfg["kernel"]["family"])
    return make_outcome(o["kind"])


def build_estimator(cfg, kind=None, discrete=None, grid_kind="probability_grid", random_state="seed"):
    kind = kind or cfg["estimator"]
    fam, h = cfg["kernel"]["family"], cfg["kernel"]["h"]
    corr = cfg["cf"]["corrector_at_observed_t"]
    bias = cfg["inference"]["band"]["bias_diagnostic"]
    if kind == "or":
        return OutcomeRegression(build_outcome(cfg), grid_kind=grid_kind)
    if kind == "ipw":
        return IPW(build_gps(cfg, discrete), fam, h, grid_kind=grid_kind)
    if kind == "dr":
        return DoublyRobust(build_gps(cfg, discrete), build_outcome(cfg), fam, h, corr, bias,
                            grid_kind=grid_kind)
    return CrossFit(build_gps(cfg, discrete), build_outcome(cfg), fam, h, cfg["cf"]["folds"], corr,
                    bias, random_state=cfg["seed"] if random_state == "seed" else random_state,
                    grid_kind=grid_kind)


def dgp_spec(cfg):
    d = cfg["dgp"]
    return DgpSpec(d["gps_scenario"], d["outcome_model"], d["n"], float(d["sigma"]), cfg["seed"], d["M"])


def load_data(cfg):
    """Observations from ``input.path`` or, when absent, one simulated draw."""
    inp = cfg["input"]
    if inp["path"] is None:
        return simulate(dgp_spec(cfg))
    if not os.path.exists(inp["path"]):
        raise DataError(f"input file {inp['path']} does not exist")
    if inp["format"] == "life_table":
        return ingest_life_tables(inp["path"], inp["bandwidth"], inp["M"], inp["age_min"], inp["age_max"])
    return read_embedded_csv(inp["path"])


def t_levels(cfg, T):
    tg = cfg["t_grid"]
    if tg["values"] is not None:
        return np.asarray(tg["values"], float)
    if tg["min"] is not None:
        return np.linspace(tg["min"], tg["max"], tg["count"])
    return np.percentile(T, tg["percentiles"])


# ---------------------------------------------------------------------------
# Verbs


def _path(cfg, name):
    return os.path.join(cfg["out"], name)


def run_simulate(cfg):
    spec = dgp_spec(cfg)
    sim = cfg["simulation"]
    # fold partitions are seeded per replication by the runner
    ests = {k: build_estimator(cfg, k, discrete=DISCRETE_COLUMNS, random_state=None)
            for k in sim["estimators"]}
    t_grid = sim["t_grid"] if sim["t_grid"] is not None else default_t_grid(spec.gps_scenario)
    report = run_monte_carlo(spec, ests, metrics=sim["metrics"], B_mc=sim["B_mc"], t_grid=t_grid,
                             alpha=cfg["inference"]["alpha"],
                             variance=cfg["inference"]["band"]["variance"],
                             threads=cfg["threads"])
    return emit_plot_data(report, _path(cfg, "mc"))


def run_estimate(cfg):
    data = load_data(cfg)
    estimates, maps = {}, []
    for group, part in data.by_group():
        levels = t_levels(cfg, part.T)
        est = build_estimator(cfg, discrete=part.discrete, grid_kind=part.grid_kind)
        fit = _compute(lambda: est.fit(part.X, part.T, part.V).estimate(levels), group)
        estimates[group] = fit
        for i, j in itertools.combinations(range(len(levels)), 2):
            lo = HilbertVector(fit.theta[i], fit.grid_kind)
            hi = HilbertVector(fit.theta[j], fit.grid_kind)
            m = effect_map(lo, hi, levels[i], levels[j])
            maps.append((group, m))
    files = emit_plot_data(estimates, _path(cfg, "estimate.csv"))
    files += write_effect_maps(maps, _path(cfg, "effect_maps.csv"))
    return files


def run_infer(cfg):
    data = load_data(cfg)
    inf = cfg["inference"]
    bands, hulc_rows, hulc_meta = {}, [], {}
    for g_index, (group, part) in enumerate(data.by_group()):
        levels = t_levels(cfg, part.T)
        est = build_estimator(cfg, discrete=part.discrete, grid_kind=part.grid_kind)
        fit = _compute(lambda: est.fit(part.X, part.T, part.V).estimate(levels), group)
        bands[group] = _compute(lambda: asymptotic_band(fit, inf["alpha"], inf["band"]["variance"]), group)
        if inf["hulc"]["enabled"]:
            hc = inf["hulc"]
            t = hc["t"] if hc["t"] is not None else float(np.percentile(part.T, 95))
            tp = hc["t_prime"] if hc["t_prime"] is not None else float(np.percentile(part.T, 5))
            seed = np.random.SeedSequence([cfg["seed"], g_index])
            interval = _compute(
                lambda: hulc_interval(part, est, t, tp, inf["alpha"], hc["delta_bias"],
                                      np.random.default_rng(seed), hc["cap"]),
                group,
            )
            label = "" if group is None else str(group)
            for j in range(part.M):
                hulc_rows.append([label, fmt(t), fmt(tp), j + 1, fmt(interval.lower[j]),
                                  fmt(interval.upper[j])])
            hulc_meta[label] = {"t": t, "t_prime": tp, "B": interval.B, "B_star": interval.B_star,
                                "tau": interval.tau, "alpha": interval.alpha,
                                "delta_bias": interval.delta_bias}
    files = emit_plot_data(bands, _path(cfg, "band.csv"), estimator=cfg["estimator"])
    if inf["hulc"]["enabled"]:
        path = _path(cfg, "hulc.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("group,t,t_prime,coordinate,lower,upper\n")
            for row in hulc_rows:
                fh.write(",".join(map(str, row)) + "\n")
        files.append(path)
        files += write_json(hulc_meta, _path(cfg, "hulc.json"))
    return files


def run_ingest_check(cfg):
    data = load_data(cfg)
    summary = {
        "units": data.n,
        "M": data.M,
        "covariates": list(data.covariate_names),
        "discrete": [bool(x) for x in data.discrete],
        "groups": None if data.groups is None else sorted({str(g) for g in data.groups}),
        "treatment_range": [float(data.T.min()), float(data.T.max())],
    }
    print(json.dumps(summary, sort_keys=True))
    files = write_json(summary, _path(cfg, "ingest_summary.json"))
    path = _path(cfg, "embedded.csv")
    write_embedded_csv(data, path)
    return files + [path]


def _compute(fn, group=None):
    try:
        return fn()
    except (FoldFitError, np.linalg.LinAlgError, FloatingPointError, ValueError, ArithmeticError) as exc:
        where = "" if group is None else f" (group {group})"
        raise NumericalError(f"{type(exc).__name__}{where}: {exc}") from exc


RUNNERS = {"simulate": run_simulate, "estimate": run_estimate, "infer": run_infer,
           "ingest-check": run_ingest_check}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def run(cfg):
    """Execute a resolved config; returns the list of files written (manifest last)."""
    os.makedirs(cfg["out"], exist_ok=True)
    stale = _path(cfg, "error.json")
    if os.path.exists(stale):
        os.remove(stale)
    files = RUNNERS[cfg["mode"]](cfg)
    manifest = {
        "package_version": __version__,
        "mode": cfg["mode"],
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "config": cfg,
        "outputs": {os.path.basename(f): _sha256(f) for f in files},
    }
    files += write_json(manifest, _path(cfg, "manifest.json"))
    return files


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="frechetdr",
        description="Doubly robust dose-response estimation for distribution-valued outcomes.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Configuration keys and defaults (override with --set key.sub=value):\n\n"
        + reference_text(),
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    for verb in VERBS:
        p = sub.add_parser(verb, formatter_class=argparse.RawDescriptionHelpFormatter,
                           epilog=parser.epilog, help=f"run in {verb} mode")
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (config key 'seed')")
        p.add_argument("--out", help="output directory (config key 'out')")
        p.add_argument("--threads", type=int, help="worker threads for Monte Carlo replications")
        p.add_argument("--input", dest="input_path", help="input CSV (config key 'input.path')")
        p.add_argument("--format", dest="input_format", choices=["embedded", "life_table"],
                       help="input layout (config key 'input.format')")
        p.add_argument("--estimator", choices=["or", "ipw", "dr", "cf"])
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; VALUE is parsed as YAML")
    return parser


def _overrides(args):
    out = {"mode": args.verb}
    for text in args.overrides:
        k, v = parse_override(text)
        out[k] = v
    for key, value in (("seed", args.seed), ("out", args.out), ("threads", args.threads),
                       ("input.path", args.input_path), ("input.format", args.input_format),
                       ("estimator", args.estimator)):
        if value is not None:
            out[key] = value
    return out


def _error_record(out_dir, code, exc):
    record = {"exit_code": code, "error_type": type(exc).__name__, "message": str(exc)}
    print(f"frechetdr: error: {exc}", file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            write_json(record, os.path.join(out_dir, "error.json"))
        except OSError:
            pass
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        cfg = resolve(args.config, _overrides(args))
        out_dir = cfg["out"]
        run(cfg)
    except ConfigError as exc:
        return _error_record(out_dir, 2, exc)
    except (DataError, OSError) as exc:
        return _error_record(out_dir, 3, exc)
    except NumericalError as exc:
        return _error_record(out_dir, 4, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
