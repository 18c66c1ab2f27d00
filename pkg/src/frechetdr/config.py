"""Run configuration: nested defaults, YAML/JSON loading and strict validation."""

import copy
import hashlib
import json

import yaml

from .errors import ConfigError

DEFAULTS = {
    "mode": "simulate",
    "seed": 0,
    "threads": 1,
    "out": "out",
    "dgp": {"gps_scenario": 1, "outcome_model": "A", "n": 1000, "sigma": 1.0, "M": 100},
    "simulation": {
        "B_mc": 100,
        "estimators": ["or", "ipw", "dr", "cf"],
        "metrics": ["mise", "loo_mse", "coverage", "band_width"],
        "t_grid": None,
    },
    "input": {
        "path": None,
        "format": "embedded",
        "bandwidth": 2.0,
        "M": 100,
        "age_min": 0.0,
        "age_max": 110.0,
    },
    "estimator": "cf",
    "kernel": {"family": "gaussian", "h": "auto"},
    "cf": {"folds": 5, "corrector_at_observed_t": False},
    "gps": {
        "kind": "linear_gaussian",
        "floor": 1e-3,
        "bandwidths": {"treatment": None, "covariates": None},
    },
    "outcome": {"kind": "global_basis", "bandwidth": None, "model_a_basis": False, "use_covariates": True},
    "t_grid": {"values": None, "min": None, "max": None, "count": None, "percentiles": [5, 50, 95]},
    "inference": {
        "alpha": 0.05,
        "band": {"variance": "influence", "bias_diagnostic": False},
        "hulc": {"enabled": True, "delta_bias": 0.0, "cap": 30, "t": None, "t_prime": None},
    },
}

# keys that change how a run executes but not what it computes
EXECUTION_KEYS = ("threads", "out")

_CHOICES = {
    ("mode",): {"simulate", "estimate", "infer", "ingest-check"},
    ("dgp", "gps_scenario"): {1, 2, 3},
    ("dgp", "outcome_model"): {"A", "B"},
    ("input", "format"): {"embedded", "life_table"},
    ("estimator",): {"or", "ipw", "dr", "cf"},
    ("kernel", "family"): {"gaussian", "epanechnikov"},
    ("gps", "kind"): {"linear_gaussian", "kernel_conditional", "constant"},
    ("outcome", "kind"): {"global_basis", "local_linear", "constant"},
    ("inference", "band", "variance"): {"influence", "kernel"},
}


def _merge(base, override, path=()):
    for key, value in override.items():
        where = ".".join(path + (str(key),))
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            _merge(base[key], value, path + (key,))
        else:
            base[key] = value


def _get(cfg, path):
    for k in path:
        cfg = cfg[k]
    return cfg


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(cfg):
    for path, allowed in _CHOICES.items():
        value = _get(cfg, path)
        _require(value in allowed, f"'{'.'.join(path)}' must be one of {sorted(map(str, allowed))}, got {value!r}")
    _require(_is_int(cfg["seed"]) and cfg["seed"] >= 0, "'seed' must be a non-negative integer")
    _require(_is_int(cfg["threads"]) and cfg["threads"] >= 1, "'threads' must be a positive integer")
    _require(isinstance(cfg["out"], str) and cfg["out"], "'out' must be a directory path")
    dgp = cfg["dgp"]
    _require(_is_int(dgp["n"]) and dgp["n"] >= 10, "'dgp.n' must be an integer >= 10")
    _require(_is_int(dgp["M"]) and dgp["M"] >= 2, "'dgp.M' must be an integer >= 2")
    _require(_is_num(dgp["sigma"]) and dgp["sigma"] >= 0, "'dgp.sigma' must be >= 0")
    sim = cfg["simulation"]
    _require(_is_int(sim["B_mc"]) and sim["B_mc"] >= 1, "'simulation.B_mc' must be a positive integer")
    _require(isinstance(sim["estimators"], list) and sim["estimators"]
             and set(sim["estimators"]) <= {"or", "ipw", "dr", "cf"},
             "'simulation.estimators' must be a non-empty list drawn from or, ipw, dr, cf")
    _require(isinstance(sim["metrics"], list)
             and set(sim["metrics"]) <= {"mise", "loo_mse", "coverage", "band_width"},
             "'simulation.metrics' must be a list drawn from mise, loo_mse, coverage, band_width")
    for path in (("simulation", "t_grid"), ("t_grid", "values")):
        v = _get(cfg, path)
        _require(v is None or (isinstance(v, list) and v and all(_is_num(x) for x in v)),
                 f"'{'.'.join(path)}' must be null or a non-empty list of numbers")
    pct = cfg["t_grid"]["percentiles"]
    _require(isinstance(pct, list) and pct and all(_is_num(x) and 0 <= x <= 100 for x in pct),
             "'t_grid.percentiles' must be a non-empty list of numbers in [0, 100]")
    inp = cfg["input"]
    _require(inp["path"] is None or isinstance(inp["path"], str), "'input.path' must be a string")
    _require(_is_num(inp["bandwidth"]) and inp["bandwidth"] >= 0, "'input.bandwidth' must be >= 0")
    _require(_is_int(inp["M"]) and inp["M"] >= 2, "'input.M' must be an integer >= 2")
    _require(_is_num(inp["age_min"]) and _is_num(inp["age_max"]) and inp["age_max"] > inp["age_min"],
             "'input.age_max' must exceed 'input.age_min'")
    h = cfg["kernel"]["h"]
    _require(h == "auto" or (_is_num(h) and h > 0), "'kernel.h' must be 'auto' or positive")
    cf = cfg["cf"]
    _require(_is_int(cf["folds"]) and cf["folds"] >= 2, "'cf.folds' must be an integer >= 2")
    _require(isinstance(cf["corrector_at_observed_t"], bool), "'cf.corrector_at_observed_t' must be boolean")
    gps = cfg["gps"]
    _require(_is_num(gps["floor"]) and gps["floor"] > 0, "'gps.floor' must be positive")
    tb, cb = gps["bandwidths"]["treatment"], gps["bandwidths"]["covariates"]
    _require(tb is None or (_is_num(tb) and tb > 0), "'gps.bandwidths.treatment' must be null or positive")
    _require(cb is None or (isinstance(cb, list) and all(_is_num(x) and x > 0 for x in cb)),
             "'gps.bandwidths.covariates' must be null or a list of positive numbers")
    out = cfg["outcome"]
    _require(out["bandwidth"] is None or (_is_num(out["bandwidth"]) and out["bandwidth"] > 0),
             "'outcome.bandwidth' must be null or positive")
    _require(isinstance(out["model_a_basis"], bool) and isinstance(out["use_covariates"], bool),
             "'outcome.model_a_basis' and 'outcome.use_covariates' must be boolean")
    tg = cfg["t_grid"]
    rng = (tg["min"], tg["max"], tg["count"])
    _require(all(v is None for v in rng) or (_is_num(tg["min"]) and _is_num(tg["max"])
             and tg["max"] > tg["min"] and _is_int(tg["count"]) and tg["count"] >= 2),
             "'t_grid.min/max/count' must be all null or max > min with count >= 2")
    inf = cfg["inference"]
    _require(_is_num(inf["alpha"]) and 0 < inf["alpha"] < 1, "'inference.alpha' must lie in (0, 1)")
    _require(isinstance(inf["band"]["bias_diagnostic"], bool), "'inference.band.bias_diagnostic' must be boolean")
    hc = inf["hulc"]
    _require(isinstance(hc["enabled"], bool), "'inference.hulc.enabled' must be boolean")
    _require(_is_num(hc["delta_bias"]) and 0 <= hc["delta_bias"] < 0.5,
             "'inference.hulc.delta_bias' must lie in [0, 0.5)")
    _require(_is_int(hc["cap"]) and hc["cap"] >= 2, "'inference.hulc.cap' must be an integer >= 2")
    for k in ("t", "t_prime"):
        _require(hc[k] is None or _is_num(hc[k]), f"'inference.hulc.{k}' must be null or a number")
    if cfg["mode"] == "ingest-check":
        _require(inp["path"] is not None, "ingest-check needs 'input.path'")
    return cfg


def resolve(source=None, overrides=None):
    """Merge ``source`` (path, mapping or ``None``) and dotted ``overrides`` over the defaults."""
    cfg = copy.deepcopy(DEFAULTS)
    if source is not None:
        if isinstance(source, dict):
            user = source
        else:
            try:
                with open(source, encoding="utf-8") as fh:
                    user = yaml.safe_load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config file {source}: {exc}") from exc
            except yaml.YAMLError as exc:
                raise ConfigError(f"config file {source} is not valid YAML/JSON: {exc}") from exc
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError("config document must be a mapping")
        _merge(cfg, copy.deepcopy(user))
    for dotted, value in (overrides or {}).items():
        node = {}
        cur = node
        parts = dotted.split(".")
        for p in parts[:-1]:
            cur[p] = {}
            cur = cur[p]
        cur[parts[-1]] = value
        _merge(cfg, node)
    return validate(cfg)


def parse_override(text):
    """``key.sub=value`` with ``value`` parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    return key.strip(), value


def canonical(cfg, drop=EXECUTION_KEYS):
    return json.dumps({k: v for k, v in cfg.items() if k not in drop}, sort_keys=True,
                      separators=(",", ":"))


def config_hash(cfg):
    """SHA-256 of the canonical JSON form, ignoring execution-only keys."""
    return hashlib.sha256(canonical(cfg).encode("utf-8")).hexdigest()


def reference_text():
    """Human-readable listing of every key and its default."""
    return yaml.safe_dump(DEFAULTS, sort_keys=False, default_flow_style=None)
