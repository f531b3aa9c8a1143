"""Command-line front end.

Every subcommand builds a :class:`~bilinsde.config.RunConfig` and hands it to
:func:`run`, which writes CSV files plus a JSON manifest next to each of
them. Exit codes: 0 success, 2 configuration error, 3 numerical or
integration failure, 4 internal error. Failures print one JSON line with
the error class on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .brackets import build_W_ladder
from .config import OUTPUT_ENV, RunConfig, load_config, parse_model_spec, validate_config
from .errors import BilinsdeError, ConfigError
from .ergodics import (
    ergodic_average,
    gradient_probe,
    irreducibility_probe,
    mixing_probe,
    occupation_measure,
    stationarity_residual,
)
from .malliavin import spectral_tail
from .model import validate_model
from .observables import parse_observable
from .sde import map_chunks, moment_tail_probe, n_steps, simulate, simulate_batch

RUNNING_MAX_ROWS = 10_000


def fmt(x) -> str:
    """Shortest round-tripping text for a number; empty for None."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([fmt(x) for x in row])
        return buf.getvalue()


@dataclass
class RunResult:
    exit_code: int
    artifacts: list
    summary: dict
    error: dict | None = None


# ---------------------------------------------------------------------------
# experiment kinds; each returns ({suffix: Table}, summary)


def _u0(cfg):
    u = cfg["u0"]
    return np.zeros(cfg.model.dim) if u is None else np.array(u)


def _observables(cfg):
    obs = []
    for name in cfg["observables"]:
        try:
            ob = parse_observable(name, cfg.model)
        except ValueError as exc:
            raise ConfigError(str(exc), field="observables") from None
        if name.startswith("coord") and not 0 <= int(name[5:]) < cfg.model.dim:
            raise ConfigError(f"{name} is out of range for dimension {cfg.model.dim}", field="observables")
        obs.append(ob)
    return obs


def _kind_validate(cfg):
    rep = validate_model(cfg.model, tol=cfg["tol"])
    t = Table(["coercivity_ok", "alpha", "cancellation_max_violation", "cancellation_ok", "sigma_ok", "ok"])
    t.rows.append([rep.coercivity_ok, rep.alpha, rep.cancellation_max_violation, rep.cancellation_ok,
                   rep.sigma_ok, rep.ok])
    return {"": t}, {"ok": rep.ok, "messages": list(rep.messages)}


def _kind_hormander(cfg):
    lad = build_W_ladder(cfg.model, cfg["n_max"], tol=cfg["rank_tol"])
    t = Table(["level", "new_vectors", "span_dim", "spanning_level"])
    for level, new, dim in lad.rows():
        t.rows.append([level, new, dim, lad.spanning_level])
    return {"": t}, {"spanning_level": lad.spanning_level, "stabilized_at": lad.stabilized_at,
                     "dim": cfg.model.dim}


def _kind_simulate(cfg):
    model, dt = cfg.model, cfg["dt"]
    M = n_steps(cfg["T"], dt)
    times = np.arange(M + 1) * dt
    U0 = _u0(cfg)

    def run(ids):
        return simulate_batch(model, U0, cfg["T"], dt, cfg["scheme"], cfg["seed"], ids, store_states=True).states

    t = Table(["path", "time"] + [f"U_{i + 1}" for i in range(model.dim)])
    p = 0
    for states in map_chunks(run, cfg["paths"], cfg["workers"]):
        for traj in states:
            for m in range(M + 1):
                t.rows.append([p, times[m], *traj[m]])
            p += 1
    return {"": t}, {"paths": p, "steps": M}


def _kind_malliavin(cfg):
    st = spectral_tail(cfg.model, _u0(cfg), cfg["T"], cfg["dt"], cfg["paths"], cfg["eps_grid"],
                       seed=cfg["seed"], scheme=cfg["scheme"], workers=cfg["workers"])
    paths = Table(["path", "lambda_min", "lambda_max", "cond"])
    for pid, lo, hi, c in zip(st.path_ids, st.lambda_min, st.lambda_max, st.condition):
        paths.rows.append([pid, lo, hi, c])
    tail = Table(["eps", "prob_lambda_min_ge_eps"])
    for e, pr in zip(st.eps, st.prob):
        tail.rows.append([e, pr])
    return {"": paths, "tail": tail}, {"n_failed": st.n_failed, "tail_exponent": st.tail_exponent,
                                       "warnings": st.warnings}


def _kind_ergodic(cfg):
    obs = _observables(cfg)
    trajs = [simulate(cfg.model, _u0(cfg), cfg["T"], cfg["dt"], cfg["scheme"], cfg["seed"], p)
             for p in range(cfg["paths"])]
    meas = occupation_measure(trajs if len(trajs) > 1 else trajs[0], cfg["burn_in"], cfg["thin"])
    summary = Table(["observable", "mean", "SE", "stationarity_residual", "residual_SE"])
    series = []
    for ob in obs:
        mean, se = meas.expect(ob)
        res, rse = stationarity_residual(meas, ob)
        summary.rows.append([ob.name, mean, se, res, rse])
        series.append(ergodic_average(trajs[0], ob, meas.burn_in))
    stride = cfg["thin"] or max(1, -(-len(series[0].times) // RUNNING_MAX_ROWS))
    running = Table(["time"] + [ob.name for ob in obs])
    for k in range(0, len(series[0].times), stride):
        running.rows.append([series[0].times[k]] + [s.running[k] for s in series])
    return {"": summary, "running": running}, {"burn_in": meas.burn_in, "thinning": meas.thinning,
                                                "samples": int(meas.flat.shape[0])}


def _kind_moments(cfg):
    tab = moment_tail_probe(cfg.model, _u0(cfg), cfg["T"], cfg["dt"], cfg["paths"], cfg["K_grid"],
                            seed=cfg["seed"], eta=cfg["eta"], scheme=cfg["scheme"], workers=cfg["workers"])
    t = Table(["K", "empirical_tail", "bound_shape"])
    for K, p, b in zip(tab.K, tab.tail, tab.bound_shape()):
        t.rows.append([K, p, b])
    return {"": t}, {"slope": tab.slope, "gamma_hat": tab.gamma_hat, "fit_ok": tab.fit_ok,
                     "exp_moment": tab.exp_moment, "exp_moment_se": tab.exp_moment_se,
                     "exp_bound": tab.exp_bound, "flags": list(tab.flags)}


def _kind_gradient(cfg):
    xi = np.eye(cfg.model.dim)[0] if cfg["xi"] is None else np.array(cfg["xi"])
    nx = np.linalg.norm(xi)
    if nx == 0:
        raise ConfigError("xi must be nonzero", field="xi")
    xi = xi / nx
    t = Table(["observable", "jacobian_estimate", "fd_estimate", "gap", "se", "se_paired"])
    for ob in _observables(cfg):
        g = gradient_probe(cfg.model, _u0(cfg), cfg["T"], cfg["dt"], ob, xi, cfg["paths"],
                           eps_fd=cfg["eps_fd"], seed=cfg["seed"], scheme=cfg["scheme"], workers=cfg["workers"])
        t.rows.append([ob.name, g.jacobian_estimate, g.finite_difference_estimate, g.gap, g.se, g.se_paired])
    return {"": t}, {"xi": xi.tolist()}


def _default_u0_list(cfg):
    if cfg["u0_list"] is not None:
        for u in cfg["u0_list"]:
            if len(u) != cfg.model.dim:
                raise ConfigError("every u0_list entry must match the model dimension", field="u0_list")
        return [np.array(u) for u in cfg["u0_list"]]
    far = np.zeros(cfg.model.dim)
    far[0] = 5.0
    return [np.zeros(cfg.model.dim), far]


def _kind_mixing(cfg):
    u0s = _default_u0_list(cfg)
    t = Table(["observable", "i", "j", "T", "gap", "se"])
    for ob in _observables(cfg):
        r = mixing_probe(cfg.model, u0s, cfg["T"], ob, cfg["paths"], dt=cfg["dt"], seed=cfg["seed"],
                         scheme=cfg["scheme"], workers=cfg["workers"])
        for i in range(len(u0s)):
            for j in range(i + 1, len(u0s)):
                t.rows.append([ob.name, i, j, r.T, r.gaps[i, j], r.se[i, j]])
    return {"": t}, {"u0_list": [u.tolist() for u in u0s]}


def _kind_irreducibility(cfg):
    r = irreducibility_probe(cfg.model, cfg["R"], cfg["eps"], cfg["T"], cfg["paths"], n_init=cfg["n_init"],
                             dt=cfg["dt"], seed=cfg["seed"], scheme=cfg["scheme"], workers=cfg["workers"])
    t = Table(["init", "prob"] + [f"U0_{i + 1}" for i in range(cfg.model.dim)])
    for k, (p, u) in enumerate(zip(r.probs, r.initial_conditions)):
        t.rows.append([k, p, *u])
    return {"": t}, {"min_prob": r.min_prob, "zero_hit": r.zero_hit.tolist()}


KIND_HANDLERS = {
    "validate": _kind_validate,
    "hormander": _kind_hormander,
    "simulate": _kind_simulate,
    "malliavin": _kind_malliavin,
    "ergodic": _kind_ergodic,
    "probe.moments": _kind_moments,
    "probe.gradient": _kind_gradient,
    "probe.mixing": _kind_mixing,
    "probe.irreducibility": _kind_irreducibility,
}


# ---------------------------------------------------------------------------
# run


def _versions():
    import scipy
    import yaml

    return {"bilinsde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pyyaml": yaml.__version__, "python": platform.python_version()}


def _error_record(exc):
    if isinstance(exc, BilinsdeError):
        rec = {"error_class": exc.error_class, "module": exc.error_class.split(".", 1)[0],
               "message": str(exc)}
        for attr in ("field", "line", "column", "step", "path", "lambda_min", "lambda_max"):
            val = getattr(exc, attr, None)
            if val is not None:
                rec[attr] = val if isinstance(val, (int, float, str)) else str(val)
        return exc.exit_code, rec
    return 4, {"error_class": "internal", "module": "cli", "message": f"{type(exc).__name__}: {exc}"}


def run(config: RunConfig) -> RunResult:
    """Execute a validated config, writing CSVs and manifests to ``output_dir``."""
    out = Path(config["output_dir"])
    stem = config["output_name"] or config.kind.replace(".", "_")
    start = time.perf_counter()
    manifest = {
        "kind": config.kind,
        "inputs": config.to_dict(),
        "provenance": config.provenance,
        "seed": config["seed"],
        "versions": _versions(),
    }
    artifacts = []
    try:
        tables, summary = KIND_HANDLERS[config.kind](config)
        code, err = 0, None
    except Exception as exc:  # reported through the exit code and manifest
        tables, summary = {}, {}
        code, err = _error_record(exc)
    manifest.update(wall_time_s=time.perf_counter() - start, exit_code=code, summary=summary, error=err)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for suffix, table in tables.items():
        name = f"{stem}_{suffix}.csv" if suffix else f"{stem}.csv"
        text = table.to_csv()
        (out / name).write_text(text)
        files[name] = hashlib.sha256(text.encode()).hexdigest()
        artifacts.append(out / name)
    manifest["outputs"] = files
    body = json.dumps(manifest, indent=2, sort_keys=True, default=_json_default)
    for name in files:
        (out / f"{name}.manifest.json").write_text(body + "\n")
    (out / f"{stem}.manifest.json").write_text(body + "\n")
    return RunResult(code, artifacts, summary, err)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------------------
# argument parsing


def _float_csv(text):
    """Comma-separated numbers, or the first row of a CSV file."""
    p = Path(text)
    if p.is_file():
        rows = [r for r in csv.reader(p.read_text().splitlines()) if r]
        for row in rows:
            try:
                return [float(x) for x in row]
            except ValueError:
                continue  # header
        raise argparse.ArgumentTypeError(f"no numeric row in {text}")
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _float_rows(text):
    return [_float_csv(part) for part in text.split(";") if part.strip()]


def _common(sub):
    sub.add_argument("--model", required=True, help="model JSON file or builtin spec, e.g. 'triad:forced_axes=[1]'")
    sub.add_argument("--u0", type=_float_csv, help="initial state: comma-separated values or a CSV file")
    sub.add_argument("--T", type=float)
    sub.add_argument("--dt", type=float)
    sub.add_argument("--scheme", choices=("semi_implicit", "explicit_em"))
    sub.add_argument("--paths", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--workers", type=int, help="worker threads (default: available cores)")
    sub.add_argument("--out", help=f"output directory, or a .csv path naming the main file "
                                   f"(default: ${OUTPUT_ENV} or ./bilinsde_out)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bilinsde", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bilinsde {__version__}")
    sp = ap.add_subparsers(dest="command", required=True)

    s = sp.add_parser("validate", help="structural checks of a model")
    _common(s)
    s.add_argument("--tol", type=float)

    s = sp.add_parser("hormander", help="bracket ladder of the forcing directions")
    _common(s)
    s.add_argument("--n-max", dest="n_max", type=int)
    s.add_argument("--rank-tol", dest="rank_tol", type=float)

    s = sp.add_parser("simulate", help="sample paths")
    _common(s)

    s = sp.add_parser("malliavin", help="Malliavin matrix spectra over paths")
    _common(s)
    s.add_argument("--eps-grid", dest="eps_grid", type=_float_csv)

    s = sp.add_parser("ergodic", help="occupation-measure averages and stationarity residuals")
    _common(s)
    s.add_argument("--burn-in", dest="burn_in", type=float)
    s.add_argument("--thin", type=int)
    s.add_argument("--observables", help="comma-separated: energy, coordK, dissipation, one")

    probe = sp.add_parser("probe", help="statistical probes")
    pp = probe.add_subparsers(dest="probe", required=True)
    s = pp.add_parser("moments")
    _common(s)
    s.add_argument("--K-grid", dest="K_grid", type=_float_csv)
    s.add_argument("--eta", type=float)
    s = pp.add_parser("gradient")
    _common(s)
    s.add_argument("--observables")
    s.add_argument("--xi", type=_float_csv)
    s.add_argument("--eps-fd", dest="eps_fd", type=float)
    s = pp.add_parser("mixing")
    _common(s)
    s.add_argument("--observables")
    s.add_argument("--u0-list", dest="u0_list", type=_float_rows, help="initial states separated by ';'")
    s = pp.add_parser("irreducibility")
    _common(s)
    s.add_argument("--R", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--n-init", dest="n_init", type=int)

    s = sp.add_parser("run", help="execute a YAML config")
    s.add_argument("config")
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    return ap


_NOT_PARAMS = {"command", "probe", "model", "out", "config"}


def config_from_args(args) -> RunConfig:
    if args.command == "run":
        cfg = load_config(args.config)
        overrides = {"workers": args.workers}
    else:
        kind = f"probe.{args.probe}" if args.command == "probe" else args.command
        doc = {"kind": kind, "model": parse_model_spec(args.model)}
        doc.update({k: v for k, v in vars(args).items() if k not in _NOT_PARAMS and v is not None})
        cfg = validate_config(doc, label="cli")
        overrides = {}
    if args.out:
        out = Path(args.out)
        if out.suffix == ".csv":
            overrides.update(output_dir=str(out.parent), output_name=out.stem)
        else:
            overrides["output_dir"] = str(out)
    for key, val in overrides.items():
        if val is not None:
            if key == "workers" and val < 1:
                raise ConfigError("workers must be positive", field="workers")
            cfg.params[key] = val
            cfg.provenance[key] = "cli"
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except Exception as exc:
        code, rec = _error_record(exc)
        print(json.dumps(rec, sort_keys=True, default=_json_default), file=sys.stderr)
        return code
    res = run(cfg)
    if res.error is not None:
        print(json.dumps(res.error, sort_keys=True, default=_json_default), file=sys.stderr)
    for path in res.artifacts:
        print(os.fspath(path))
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
