"""Command line front end: ``qgmm estimate | simulate | selftest``.

Every JSON output carries the package version, the seed and a hash of
the resolved configuration; identical inputs give byte-identical JSON.
Settings come from flags, then a ``--config`` JSON file, then defaults.

Exit codes: 0 success, 1 other estimation failure or failed self-check,
2 identification failure (or usage error), 3 input/output error.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys

import numpy as np

from . import __version__
from ._parallel import ENV_THREADS
from .errors import IdentificationError, QGMMError
from .euler import ConsumptionPanel, CsvSchemaError, estimate_preferences
from .estimator import bootstrap_inference, estimate
from .model import ChoiceBlock, LinearQuantileModel, ObservationSet
from .optimizer import AnnealConfig
from .simulation import run_replications
from .bandwidth import parse_bandwidth

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IDENTIFICATION = 2
EXIT_IO = 3

DEFAULTS = {
    "model": "euler",
    "bandwidth": "plugin",
    "bootstrap": 0,
    "seed": 0,
    "threads": None,
    "cov": "iid",
    "lags": None,
    "dgp": 1,
    "n": 1500,
    "reps": 200,
    "tolerance": None,
    "anneal": {},
}
_ANNEAL_KEYS = {
    "max_iterations", "initial_temperature", "cooling_rate", "polish_tolerance",
    "restarts", "initial_step", "min_step", "beta_radius", "polish_max_evaluations",
}


class InputError(Exception):
    """Unreadable or malformed input; mapped to exit code 3."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj):
    """Canonical JSON: sorted keys, non-finite floats as null."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def config_hash(config):
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve(args, keys):
    """Merge flags over the config file over defaults for ``keys``."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise InputError(f"config {args.config} must hold a JSON object")
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = DEFAULTS[key]
    anneal = dict(file_cfg.get("anneal", {}))
    if getattr(args, "max_iterations", None) is not None:
        anneal["max_iterations"] = args.max_iterations
    unknown = set(anneal) - _ANNEAL_KEYS
    if unknown:
        raise InputError(f"unknown anneal settings: {sorted(unknown)}")
    out["anneal"] = anneal
    return out


def _anneal_config(cfg):
    return AnnealConfig(seed=int(cfg["seed"]), **cfg["anneal"])


def _meta(cfg, command):
    return {"version": __version__, "command": command, "seed": cfg["seed"],
            "config": cfg, "config_hash": config_hash({"command": command, **cfg})}


def _emit(text, out_path):
    if out_path:
        try:
            with open(out_path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise InputError(f"cannot write {out_path}: {exc}") from None


_CUSTOM_COL = re.compile(r"^(y|x|z)(\d+)(?:_(\d+))?$")


def read_custom_csv(path):
    """Linear IV quantile data for ``--model custom``.

    Columns ``y<j>`` (outcome), ``x<j>_<k>`` (regressors) and
    ``z<j>_<k>`` (instruments, constant not included) for choices
    j = 1..m. Every choice needs the same number of x and z columns.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not header:
        raise InputError(f"{path}: empty file")
    layout = {}
    for col, name in enumerate(header):
        m = _CUSTOM_COL.match(name.strip())
        if m:
            kind, j = m.group(1), int(m.group(2))
            layout.setdefault(j, {"y": [], "x": [], "z": []})[kind].append(col)
    if len(layout) < 2:
        raise InputError(f"{path}: need columns for at least 2 choices (y1, y2, ...)")
    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(f"{path}: line {i + 2} has {len(row)} fields, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                values[i, c] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: line {i + 2}, column {header[c]!r}: cannot parse {cell!r} as a number"
                ) from None
    blocks = []
    d_x = None
    for j in sorted(layout):
        cols = layout[j]
        for kind in ("y", "x", "z"):
            if not cols[kind]:
                raise InputError(f"{path}: choice {j} has no {kind}{j} column")
        if d_x is None:
            d_x = len(cols["x"])
        elif len(cols["x"]) != d_x:
            raise InputError(f"{path}: choice {j} has {len(cols['x'])} regressors, expected {d_x}")
        z = np.column_stack([np.ones(len(rows)), values[:, cols["z"]]])
        blocks.append(ChoiceBlock(values[:, cols["y"][0]], values[:, cols["x"]], z))
    try:
        return ObservationSet(blocks), LinearQuantileModel(d_x)
    except QGMMError as exc:
        raise InputError(f"{path}: {exc}") from None


def _estimate_table(d):
    lines = [f"{'param':<8}{'estimate':>12}{'se':>12}{'ci_low':>12}{'ci_high':>12}"]
    for name in ("tau", "delta", "gamma", "eis"):
        lo, hi = d["ci"][name]
        lines.append(f"{name:<8}{d[name]:>12.6f}{_fmt(d['se'][name])}{_fmt(lo)}{_fmt(hi)}")
    return "\n".join(lines)


def _fmt(v):
    return f"{v:>12.6f}" if v is not None and math.isfinite(v) else f"{'nan':>12}"


def run_estimate(args):
    cfg = resolve(args, ["model", "bandwidth", "bootstrap", "seed", "threads", "cov", "lags"])
    cfg["data"] = os.path.basename(args.data)
    config = _anneal_config(cfg)
    bw = parse_bandwidth(cfg["bandwidth"])
    if cfg["model"] == "euler":
        try:
            panel = ConsumptionPanel.from_csv(args.data)
        except (OSError, CsvSchemaError) as exc:
            raise InputError(str(exc)) from None
        result = estimate_preferences(
            panel, bw, config, bootstrap=int(cfg["bootstrap"]), seed=int(cfg["seed"]),
            cov_method=cfg["cov"], lags=cfg["lags"], workers=cfg["threads"],
        )
        body = result.to_dict()
        table = _estimate_table(body)
    else:
        data, model = read_custom_csv(args.data)
        report = estimate(data, model, bw, config, cfg["cov"], cfg["lags"])
        body = report.to_dict()
        body["inference"] = "asymptotic"
        if int(cfg["bootstrap"]) > 0:
            bs = bootstrap_inference(
                data, model, bw, int(cfg["bootstrap"]), int(cfg["seed"]), config,
                theta_hat=report.theta_hat, cov_method=cfg["cov"], lags=cfg["lags"],
                workers=cfg["threads"],
            )
            for k, name in enumerate(model.names()):
                body["params"][name]["se"] = float(bs.se[k])
                body["params"][name]["ci"] = [float(bs.ci_low[k]), float(bs.ci_high[k])]
            body["inference"] = "bootstrap"
            body["bootstrap_failures"] = bs.failures
        table = "\n".join(
            f"{name:<8}{p['estimate']:>12.6f}{_fmt(p['se'])}" for name, p in body["params"].items()
        )
    text = dumps({**_meta(cfg, "estimate"), **body})
    _emit(text, args.out)
    print(text if args.json else table, end="" if args.json else "\n")
    return EXIT_OK


def run_simulate(args):
    cfg = resolve(args, ["dgp", "n", "reps", "bandwidth", "seed", "threads", "cov"])
    if int(cfg["dgp"]) not in (1, 2):
        raise argparse.ArgumentTypeError(f"invalid dgp {cfg['dgp']}; expected 1 or 2")
    table = run_replications(
        int(cfg["dgp"]), int(cfg["n"]), int(cfg["reps"]), cfg["bandwidth"], int(cfg["seed"]),
        _anneal_config(cfg), workers=cfg["threads"], cov_method=cfg["cov"],
    )
    text = dumps({**_meta(cfg, "simulate"), **table.to_dict()})
    if args.out:
        _emit(text, args.out)
        _emit(table.to_csv(), os.path.splitext(args.out)[0] + ".csv")
    print(text if args.json else table.to_csv(), end="")
    return EXIT_OK


def run_selftest(args):
    from .selftest import run_all

    results = run_all(args.tolerance)
    ok = all(r.passed for r in results)
    if args.json:
        print(dumps({"version": __version__, "passed": ok, "checks": [r.to_dict() for r in results]}), end="")
    else:
        for r in results:
            print(r.line())
        print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAILURE


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="qgmm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"qgmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--threads", type=_positive_int,
                       help=f"worker processes; ${ENV_THREADS} is used when absent")
        p.add_argument("--out", help="write the JSON result here")
        p.add_argument("--json", action="store_true", help="print JSON instead of a table")
        p.add_argument("--config", help="JSON file of settings; flags take precedence")
        p.add_argument("--bandwidth", help="'plugin' or 'fixed:<h>'")
        p.add_argument("--cov", choices=["iid", "hac"], help="moment covariance estimator")
        p.add_argument("--max-iterations", type=_positive_int, dest="max_iterations",
                       help="annealing budget (objective evaluations)")

    est = sub.add_parser("estimate", help="fit a model to a CSV file")
    common(est)
    est.add_argument("--model", choices=["euler", "custom"])
    est.add_argument("--data", required=True, help="CSV input")
    est.add_argument("--bootstrap", type=int, help="bootstrap draws; 0 gives asymptotic inference")
    est.add_argument("--lags", type=int, help="HAC truncation lag")
    est.set_defaults(func=run_estimate)

    sim = sub.add_parser("simulate", help="Monte Carlo bias/RMSE table")
    common(sim)
    sim.add_argument("--dgp", type=int, choices=[1, 2])
    sim.add_argument("--n", type=_positive_int)
    sim.add_argument("--reps", type=_positive_int)
    sim.set_defaults(func=run_simulate)

    st = sub.add_parser("selftest", help="numerical self-checks")
    st.add_argument("--tolerance", type=float, help="override every check tolerance")
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=run_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None:
        os.environ[ENV_THREADS] = str(args.threads)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"qgmm: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except IdentificationError as exc:
        print(f"qgmm: identification failure: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except QGMMError as exc:
        print(f"qgmm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
