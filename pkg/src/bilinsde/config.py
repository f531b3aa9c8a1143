"""Run configuration.

A config is a YAML mapping. Example::

    kind: malliavin            # validate | hormander | simulate | malliavin | ergodic
                               # | probe.moments | probe.gradient | probe.mixing | probe.irreducibility
    model:
      builtin: triad           # triad | nse2d | linear
      params: {c: [1, 1, -2], nu: 1.0, forced_axes: [1, 2]}
      # alternatively  file: model.json  or  inline: {dim: 3, noise_dim: ..., nu: ..., A: ..., B: ..., sigma: ...}
    u0: [0.0, 0.0, 0.0]
    T: 1.0
    dt: 0.01
    paths: 100
    seed: 0
    eps_grid: [1.0e-6, 1.0e-4, 1.0e-2]
    output_dir: out/malliavin

Every key not given is filled from ``DEFAULTS`` and recorded as such in
``RunConfig.provenance``.
"""

from __future__ import annotations

import difflib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, ConfigParseError
from .model import BilinearModel, load_model, make_galerkin_nse2d, make_linear, make_triad, model_from_dict

KINDS = (
    "validate",
    "hormander",
    "simulate",
    "malliavin",
    "ergodic",
    "probe.moments",
    "probe.gradient",
    "probe.mixing",
    "probe.irreducibility",
)

OUTPUT_ENV = "BILINSDE_OUTPUT_DIR"

DEFAULTS = {
    "u0": None,  # zero vector of the model dimension
    "T": 1.0,
    "dt": 0.01,
    "scheme": "semi_implicit",
    "paths": 1,
    "seed": 0,
    "workers": None,  # available cores
    "n_max": 10,
    "tol": 1e-10,
    "rank_tol": 1e-8,
    "eps_grid": [1e-8, 1e-6, 1e-4, 1e-2],
    "burn_in": None,  # 10% of T
    "thin": None,  # automatic
    "observables": ["energy"],
    "K_grid": [2.0, 4.0, 6.0, 8.0, 10.0],
    "eta": 0.05,
    "xi": None,  # e_1
    "eps_fd": 1e-5,
    "u0_list": None,  # [0, 5 e_1]
    "R": 5.0,
    "eps": 0.5,
    "n_init": 20,
    "output_dir": None,  # $BILINSDE_OUTPUT_DIR or ./bilinsde_out
    "output_name": None,  # stem of the CSV files; defaults to the kind
}
VALID_KEYS = ("kind", "model") + tuple(DEFAULTS)
SCHEMES = ("semi_implicit", "explicit_em")
BUILTINS = ("triad", "nse2d", "linear")
MODEL_KEYS = ("file", "inline", "builtin", "params")


@dataclass
class RunConfig:
    kind: str
    model_source: dict
    params: dict
    provenance: dict = field(default_factory=dict)
    model: BilinearModel = field(default=None, repr=False)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "model": self.model_source, **self.params}


def build_model(source: dict, base_dir=None) -> BilinearModel:
    """Model from ``{"file": path}``, ``{"inline": {...}}`` or ``{"builtin": name, "params": {...}}``."""
    if "inline" in source:
        return model_from_dict(source["inline"])
    if "file" in source:
        path = Path(source["file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_model(path)
    name = source.get("builtin")
    p = dict(source.get("params") or {})
    try:
        if name == "triad":
            return make_triad(**p)
        if name == "nse2d":
            return make_galerkin_nse2d(**p)
        if name == "linear":
            forced = p.pop("forced_axes", None)
            N = int(p.pop("N", 2))
            sigma = None
            if forced is not None:
                import numpy as np

                sigma = np.eye(N)[:, [int(a) - 1 for a in forced]]
            return make_linear(N, sigma=sigma, **p)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for builtin model {name!r}: {exc}", field="model.params") from None
    raise ConfigError(f"unknown builtin model {name!r}; expected one of {BUILTINS}", field="model.builtin")


def _nearest(key, options):
    close = difflib.get_close_matches(key, options, n=3, cutoff=0.5)
    return ", ".join(close) if close else ", ".join(options)


def _positive(name, value, integer=False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}", field=name) from None
    if integer and float(value) != v:
        raise ConfigError(f"{name} must be an integer, got {value!r}", field=name)
    if not (math.isfinite(v) and v > 0):
        raise ConfigError(f"{name} must be positive, got {value!r}", field=name)
    return v


def _float_list(name, value, allow_none=False):
    if value is None and allow_none:
        return None
    try:
        return [float(x) for x in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers", field=name) from None


def validate_config(doc: dict, base_dir=None, env=None, label="config") -> RunConfig:
    env = os.environ if env is None else env
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of keys to values")
    for key in doc:
        if key not in VALID_KEYS:
            raise ConfigError(
                f"unknown key {key!r}; nearest valid keys: {_nearest(str(key), VALID_KEYS)}", field=str(key)
            )
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}; got {kind!r}", field="kind")

    src = doc.get("model")
    if not isinstance(src, dict) or len({"file", "builtin", "inline"} & set(src)) != 1:
        raise ConfigError("model must be a mapping with exactly one of 'file', 'inline', 'builtin'", field="model")
    for key in src:
        if key not in MODEL_KEYS:
            raise ConfigError(
                f"unknown key model.{key}; nearest valid keys: {_nearest(key, MODEL_KEYS)}",
                field=f"model.{key}",
            )
    if "file" in src:
        path = Path(src["file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.is_file():
            raise ConfigError(f"model file {str(path)!r} does not exist", field="model.file")

    params, prov = {}, {}
    for key, default in DEFAULTS.items():
        if key in doc and doc[key] is not None:
            params[key] = doc[key]
            prov[key] = label
        else:
            params[key] = default
            prov[key] = "default"
    if prov["output_dir"] == "default":
        if env.get(OUTPUT_ENV):
            params["output_dir"] = env[OUTPUT_ENV]
            prov["output_dir"] = f"env:{OUTPUT_ENV}"
        else:
            params["output_dir"] = "bilinsde_out"
    if params["workers"] is None:
        params["workers"] = os.cpu_count() or 1

    params["T"] = _positive("T", params["T"])
    params["dt"] = _positive("dt", params["dt"])
    if params["dt"] > params["T"]:
        raise ConfigError("dt must not exceed T", field="dt")
    ratio = params["T"] / params["dt"]
    if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0):
        raise ConfigError("T must be an integer multiple of dt", field="dt")
    for key in ("paths", "workers", "n_init"):
        params[key] = _positive(key, params[key], integer=True)
    params["n_max"] = int(params["n_max"])
    if params["n_max"] < 0:
        raise ConfigError("n_max must be >= 0", field="n_max")
    params["seed"] = int(params["seed"])
    if not 0 <= params["seed"] < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer", field="seed")
    if params["scheme"] not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}", field="scheme")
    for key in ("tol", "rank_tol", "eta", "eps_fd", "R", "eps"):
        params[key] = _positive(key, params[key])
    for key in ("eps_grid", "K_grid"):
        params[key] = _float_list(key, params[key])
    params["u0"] = _float_list("u0", params["u0"], allow_none=True)
    params["xi"] = _float_list("xi", params["xi"], allow_none=True)
    if params["burn_in"] is not None:
        params["burn_in"] = float(params["burn_in"])
        if not 0 <= params["burn_in"] < params["T"]:
            raise ConfigError("burn_in must lie in [0, T)", field="burn_in")
    if params["thin"] is not None:
        params["thin"] = _positive("thin", params["thin"], integer=True)
    obs = params["observables"]
    if isinstance(obs, str):
        obs = [o for o in obs.split(",") if o]
    params["observables"] = [str(o) for o in obs]
    if params["output_name"] is not None:
        params["output_name"] = str(params["output_name"])
        if not params["output_name"] or "/" in params["output_name"]:
            raise ConfigError("output_name must be a bare file stem", field="output_name")
    if params["u0_list"] is not None:
        params["u0_list"] = [_float_list("u0_list", u) for u in params["u0_list"]]

    cfg = RunConfig(kind, dict(src), params, prov)
    cfg.model = build_model(src, base_dir)
    N = cfg.model.dim
    for key in ("u0", "xi"):
        if params[key] is not None and len(params[key]) != N:
            raise ConfigError(f"{key} has length {len(params[key])}, model dimension is {N}", field=key)
    return cfg


def parse_config(text: str, base_dir=None, env=None) -> RunConfig:
    """Parse YAML text into a validated :class:`RunConfig`.

    Syntax errors raise :class:`ConfigParseError` with 1-based line/column.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        col = mark.column + 1 if mark is not None else None
        where = f" at line {line}, column {col}" if mark is not None else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigParseError(f"config parse error{where}: {problem}", line=line, column=col) from None
    if doc is None:
        doc = {}
    return validate_config(doc, base_dir, env)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def parse_model_spec(spec: str) -> dict:
    """``--model`` value: a JSON file path, or ``name[:key=value;key=value]``.

    Values are YAML scalars or flow lists, e.g.
    ``nse2d:K=2;forced_modes=[[1,0],[1,1]]``.
    """
    if Path(spec).is_file():
        return {"file": spec}
    name, _, rest = spec.partition(":")
    if name not in BUILTINS:
        raise ConfigError(f"--model {spec!r} is neither a file nor a builtin ({', '.join(BUILTINS)})",
                          field="model")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(";"))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"model parameter {item!r} is not key=value", field="model.params")
        try:
            params[key.strip()] = yaml.safe_load(value)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse model parameter {item!r}", field="model.params") from None
    return {"builtin": name, "params": params}
