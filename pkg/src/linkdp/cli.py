"""Command-line interface.

Every subcommand resolves its configuration as flags over ``--config`` file
over defaults and writes a manifest next to its outputs. ``linkdp rerun
MANIFEST`` replays a run from the manifest and reports whether every output
came out byte-identical.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .dp_regression import SspConfig, ngd_fit, ssp_fit, suggested_ngd_config
from .estimators import FitResult, SingularMatrixError, ols_fit, residual_sigma, rl_fit
from .linkage import LinkageError, LinkedDataset, identity, load_mpm, save_mpm, transform_design
from .linker import DEFAULT_CORRUPTION_RATE, DEFAULT_THRESHOLD, EntityTable, generate_corpus, link_records, linked_dataset
from .privacy import (
    BoundSet,
    PrivacyBudget,
    PrivacyWarning,
    composition_noise_scale,
    data_bounds,
    default_truncation,
    ngd_sensitivity_factor,
    simplified_regime,
    ssp_noise_scale,
    ssp_sensitivity_factor,
    zcdp_rho,
)
from .simlab import ScenarioConfig, run_scenario, setting

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(text: str, out: str | None) -> list[Path]:
    if out is None:
        sys.stdout.write(text)
        return []
    path = Path(out)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return [path]


def read_matrix_csv(path: str | Path) -> np.ndarray:
    """Numeric CSV with a header row; returns a 2-D array."""
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise UsageError(f"{path}: expected a header row and at least one data row")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return data


def write_matrix_csv(path: Path, data: np.ndarray, header: list[str]) -> Path:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 1 and len(header) != 1:
        data = data.reshape(1, -1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    return path


def _warn_to_stderr(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands: each has defaults, a parser setup and a runner(config) -> outputs
# --------------------------------------------------------------------------


def _run_gen_data(cfg: dict) -> list[Path]:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    A, B = generate_corpus(
        cfg["n"], cfg["blocks"], cfg["corruption_rate"], seed=cfg["seed"], slope=cfg["slope"], noise=cfg["noise"]
    )
    pa, pb = out / "a.csv", out / "b.csv"
    A.to_csv(pa)
    B.to_csv(pb)
    return [pa, pb]


def _run_link(cfg: dict) -> list[Path]:
    A = EntityTable.from_csv(cfg["a"])
    B = EntityTable.from_csv(cfg["b"])
    result = link_records(A, B, cfg["threshold"], seed=cfg["seed"])
    outputs = _emit(result.to_json() + "\n", cfg["out"])
    if cfg["data_dir"]:
        d = Path(cfg["data_dir"])
        d.mkdir(parents=True, exist_ok=True)
        data, Q = linked_dataset(A, B, result)
        outputs.append(write_matrix_csv(d / "x.csv", data.X, ["x1"]))
        outputs.append(write_matrix_csv(d / "z.csv", data.z[:, None], ["z"]))
        save_mpm(Q, d / "q.json")
        outputs.append(d / "q.json")
    return outputs


def _run_budget(cfg: dict) -> list[Path]:
    budget = PrivacyBudget(cfg["epsilon"], cfg["delta"])
    T, sens = cfg["iterations"], cfg["sensitivity"]
    scales = {"exact": composition_noise_scale(sens, T, budget, "exact")}
    if simplified_regime(budget):
        scales["simplified"] = composition_noise_scale(sens, T, budget, "simplified")
    else:
        scales["simplified"] = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        gauss = ssp_noise_scale(sens, budget)
    doc = {
        "epsilon": budget.epsilon,
        "delta": budget.delta,
        "rho": zcdp_rho(budget),
        "simplified_regime": simplified_regime(budget),
        "sensitivity": sens,
        "iterations": T,
        "noise_scale": scales,
        "gaussian_mechanism_scale": gauss,
    }
    return _emit(_dump(doc), cfg["out"])


def _run_fit(cfg: dict) -> list[Path]:
    X = read_matrix_csv(cfg["x"])
    z = read_matrix_csv(cfg["z"])
    if z.shape[1] != 1:
        raise UsageError(f"{cfg['z']}: expected one column, got {z.shape[1]}")
    z = z[:, 0]
    Q = load_mpm(cfg["q"]) if cfg["q"] else identity(X.shape[0])
    scaling = None
    if cfg["standardize"]:
        mx, sx = X.mean(axis=0), X.std(axis=0)
        mz, sz = z.mean(), z.std()
        if np.any(sx == 0) or sz == 0:
            raise UsageError("cannot standardize a constant column")
        X = (X - mx) / sx
        z = (z - mz) / sz
        scaling = {"x_mean": mx.tolist(), "x_scale": sx.tolist(), "z_mean": float(mz), "z_scale": float(sz)}
    method = cfg["method"]
    if method == "ols":
        fit = ols_fit(X, z)
    elif method == "rl":
        fit = rl_fit(X, z, Q)
    else:
        fit = _private_fit(cfg, X, z, Q)
    fit.seed = cfg["seed"] if method in ("ngd", "ssp") else None
    if scaling:
        fit.diagnostics["standardization"] = scaling
    return _emit(fit.to_json() + "\n", cfg["out"])


def _private_fit(cfg: dict, X: np.ndarray, z: np.ndarray, Q) -> FitResult:
    for key in ("epsilon", "delta"):
        if cfg[key] is None:
            raise UsageError(f"--{key} is required for --method {cfg['method']}")
    budget = PrivacyBudget(cfg["epsilon"], cfg["delta"])
    n, d = X.shape
    data = LinkedDataset(X, z)
    sigma = cfg["sigma"]
    if sigma is None:
        warnings.warn("--sigma not given; estimating it from the residuals, which is not private", PrivacyWarning)
        sigma = residual_sigma(X, z, Q)
    c_x, L = cfg["cx"], cfg["l"]
    if c_x is None or L is None:
        found = data_bounds(X, transform_design(Q, X))
        c_x = found["c_x"] if c_x is None else c_x
        L = found["L"] if L is None else L
    R = default_truncation(sigma, n)
    bounds = BoundSet(c_x=c_x, M=cfg["m"], c0=cfg["c0"], L=L, R=R, C=cfg["C"])
    if cfg["method"] == "ngd":
        conf = suggested_ngd_config(
            n, d, bounds, sigma_estimate=sigma, t_fraction=cfg["t_fraction"], seed=cfg["seed"], route=cfg["noise_route"]
        )
        conf = replace(conf, C=bounds.C, B=ngd_sensitivity_factor(bounds))
        return ngd_fit(data, Q, budget, bounds, conf)
    conf = SspConfig(R=R, B=ssp_sensitivity_factor(bounds), seed=cfg["seed"])
    return ssp_fit(data, Q, budget, bounds, conf)


def _run_simulate(cfg: dict) -> list[Path]:
    which = cfg["setting"]
    overrides = dict(cfg["scenario"] or {})
    if which == "custom":
        if not overrides:
            raise UsageError("--setting custom needs --config with a scenario")
        base = ScenarioConfig.from_dict(overrides)
    else:
        base = setting(int(which))
        if overrides:
            base = ScenarioConfig.from_dict({**base.to_dict(), **overrides})
    if cfg["reps"] is not None:
        base = replace(base, reps=cfg["reps"])
    if cfg["seed"] is not None:
        base = replace(base, master_seed=cfg["seed"])
    report = run_scenario(base)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{base.name}.csv"
    csv_path.write_text(report.to_csv())
    summary = out / f"{base.name}.summary.json"
    summary.write_text(_dump(report.manifest()))
    return [csv_path, summary]


SUBCOMMANDS: dict[str, dict] = {
    "gen-data": {
        "run": _run_gen_data,
        "defaults": {
            "n": 5000,
            "blocks": 9,
            "corruption_rate": DEFAULT_CORRUPTION_RATE,
            "slope": 0.9,
            "noise": 0.45,
            "seed": 0,
            "out": None,
        },
        "required": ("out",),
    },
    "link": {
        "run": _run_link,
        "defaults": {"a": None, "b": None, "threshold": DEFAULT_THRESHOLD, "seed": 0, "out": None, "data_dir": None},
        "required": ("a", "b"),
        "inputs": ("a", "b"),
    },
    "budget": {
        "run": _run_budget,
        "defaults": {"epsilon": None, "delta": None, "sensitivity": 1.0, "iterations": 1, "out": None},
        "required": ("epsilon", "delta"),
    },
    "fit": {
        "run": _run_fit,
        "defaults": {
            "method": None,
            "x": None,
            "z": None,
            "q": None,
            "epsilon": None,
            "delta": None,
            "cx": None,
            "m": 1.0,
            "c0": 1.0,
            "l": None,
            "C": None,
            "sigma": None,
            "t_fraction": 1.0,
            "noise_route": "exact",
            "standardize": False,
            "seed": 0,
            "out": None,
        },
        "required": ("method", "x", "z"),
        "inputs": ("x", "z", "q"),
    },
    "simulate": {
        "run": _run_simulate,
        "defaults": {"setting": None, "scenario": None, "reps": None, "seed": None, "out": None},
        "required": ("setting", "out"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linkdp", description="Differentially private regression on linked data.")
    parser.add_argument("--version", action="version", version=f"linkdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help="output file (default: standard output)"):
        p.add_argument("--config", help="JSON file with option values; flags take precedence")
        p.add_argument("--out", help=out_help)
        p.add_argument("--manifest", help="manifest path (default: next to the output)")

    p = sub.add_parser("gen-data", help="write a synthetic pair of tables a.csv and b.csv")
    common(p, "output directory")
    p.add_argument("--n", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--corruption-rate", type=float, dest="corruption_rate")
    p.add_argument("--slope", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("link", help="link two tables and estimate per-block accuracy")
    common(p, "linkage JSON (default: standard output)")
    p.add_argument("--a", help="table carrying the covariate")
    p.add_argument("--b", help="table carrying the response")
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", dest="data_dir", help="also write x.csv, z.csv and q.json here")

    p = sub.add_parser("budget", help="zCDP parameter and noise scales for a privacy budget")
    common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--sensitivity", type=float)
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("fit", help="fit a regression and print the result as JSON")
    common(p)
    p.add_argument("--method", choices=("ols", "rl", "ngd", "ssp"))
    p.add_argument("--x")
    p.add_argument("--z")
    p.add_argument("--q")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--cx", type=float)
    p.add_argument("--m", type=float)
    p.add_argument("--c0", type=float)
    p.add_argument("--l", type=float)
    p.add_argument("--C", type=float, dest="C", help="projection radius (default: c0)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--t-fraction", type=float, dest="t_fraction")
    p.add_argument("--noise-route", choices=("exact", "simplified"), dest="noise_route")
    p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="run a simulation setting and write a CSV report")
    common(p, "output directory")
    p.add_argument("--setting", choices=("1", "2", "3", "custom"))
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Flags over config file over defaults."""
    entry = SUBCOMMANDS[command]
    cfg = dict(entry["defaults"])
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from None
        if command == "simulate":
            cfg["scenario"] = doc.pop("scenario", None) if "scenario" in doc else None
            if cfg["scenario"] is None:
                cfg["scenario"] = {k: v for k, v in doc.items() if k not in cfg}
                doc = {k: v for k, v in doc.items() if k in cfg}
        unknown = set(doc) - set(cfg)
        if unknown:
            raise UsageError(f"unknown keys in --config: {sorted(unknown)}")
        cfg.update(doc)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k in entry["required"] if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


def _manifest_path(command: str, cfg: dict, outputs: list[Path], explicit: str | None) -> Path | None:
    if explicit:
        return Path(explicit)
    if command in ("gen-data", "simulate"):
        return Path(cfg["out"]) / "manifest.json"
    if cfg.get("out"):
        out = Path(cfg["out"])
        return out.with_name(out.stem + ".manifest.json")
    return None


def execute(command: str, cfg: dict, argv: list[str], manifest: str | None = None) -> list[Path]:
    entry = SUBCOMMANDS[command]
    outputs = entry["run"](cfg)
    path = _manifest_path(command, cfg, outputs, manifest)
    if path is not None:
        inputs = {k: {"path": str(cfg[k]), "sha256": sha256(cfg[k])} for k in entry.get("inputs", ()) if cfg.get(k)}
        doc = {
            "subcommand": command,
            "argv": argv,
            "config": cfg,
            "seed": cfg.get("seed"),
            "version": __version__,
            "inputs": inputs,
            "outputs": {str(p): sha256(p) for p in outputs},
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dump(doc))
    return outputs


def rerun(manifest_path: str) -> dict[str, str]:
    doc = json.loads(Path(manifest_path).read_text())
    command = doc["subcommand"]
    if command not in SUBCOMMANDS:
        raise UsageError(f"manifest names unknown subcommand {command!r}")
    for key, entry in doc.get("inputs", {}).items():
        if sha256(entry["path"]) != entry["sha256"]:
            raise UsageError(f"input {key} ({entry['path']}) changed since the recorded run")
    outputs = SUBCOMMANDS[command]["run"](doc["config"])
    status = {}
    for p in outputs:
        before = doc["outputs"].get(str(p))
        status[str(p)] = "identical" if before == sha256(p) else "changed"
    return status


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    previous = warnings.showwarning
    warnings.showwarning = _warn_to_stderr
    try:
        if args.command == "rerun":
            status = rerun(args.manifest)
            sys.stdout.write(_dump(status))
            return EXIT_OK if all(v == "identical" for v in status.values()) else EXIT_USAGE
        cfg = resolve(args.command, args)
        execute(args.command, cfg, argv, getattr(args, "manifest", None))
        return EXIT_OK
    except (SingularMatrixError, FloatingPointError) as exc:
        print(f"linkdp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, LinkageError, ValueError, OSError, KeyError) as exc:
        print(f"linkdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        warnings.showwarning = previous


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
