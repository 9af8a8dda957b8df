"""Command-line surface: data generation, single fits, grids, and audits.

Configs are JSON with strict key checking: an unknown key anywhere is a
hard error rather than a silently ignored typo. Flags override file
values; `--set dotted.key=value` overrides anything else.

Exit codes: 0 success, 2 input or config error, 3 fit did not converge,
4 grid completed partially.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import (
    ContaminationSpec,
    GaussianSpec,
    LabeledDataset,
    contaminate,
    make_sparse_difference,
    read_dataset_csv,
    sample_gaussian,
    write_dataset_csv,
)
from .diagnostics import ThetaBox, assumption_audit, leverage_stats
from .experiments import ExperimentConfig, run_grid, write_results_csv
from .features import FeatureMap, theta_from_matrix
from .model import ObjectiveSpec, precompute
from .optim import SolverConfig, fit, lambda_schedule
from .weights import WeightConfig

__all__ = ["main"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_PARTIAL = 4

_PAPER_SCALE_DIMS = (50, 100, 200)
_PAPER_SCALE_REPS = 200


class CliError(Exception):
    """Input or configuration problem; maps to exit code 2."""


def _fail(msg: str) -> "CliError":
    return CliError(msg)


def _strict_keys(raw: dict, allowed: set[str], context: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise _fail(f"unknown {context} key(s): {', '.join(sorted(unknown))}")


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise _fail(f"config file not found: {path}")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise _fail(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise _fail(f"{path}: top level must be a JSON object")
    return raw


def _parse_set_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_sets(raw: dict, assignments: list[str]) -> None:
    for item in assignments:
        if "=" not in item:
            raise _fail(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        target = raw
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise _fail(f"--set {key}: {part} is not an object")
        target[parts[-1]] = _parse_set_value(value)


def _eps_lists(raw: dict, context: str) -> tuple[tuple[float, ...], tuple[float, ...]]:
    has_eps = "eps" in raw
    has_sides = "eps_p" in raw or "eps_q" in raw
    if has_eps and has_sides:
        raise _fail(f"{context}: give either eps or eps_p/eps_q, not both")

    def as_list(v):
        return [float(x) for x in (v if isinstance(v, list) else [v])]

    if has_eps:
        vals = as_list(raw["eps"])
        return tuple(vals), tuple(vals)
    eps_p = as_list(raw.get("eps_p", 0.0))
    eps_q = as_list(raw.get("eps_q", 0.0))
    if len(eps_p) == 1 and len(eps_q) > 1:
        eps_p = eps_p * len(eps_q)
    if len(eps_q) == 1 and len(eps_p) > 1:
        eps_q = eps_q * len(eps_p)
    if len(eps_p) != len(eps_q):
        raise _fail(f"{context}: eps_p and eps_q must have matching lengths")
    return tuple(eps_p), tuple(eps_q)


def _outlier_spec(raw: dict) -> tuple[float, float]:
    out = raw.get("outlier", {})
    if not isinstance(out, dict):
        raise _fail("outlier must be an object with keys loc, scale")
    _strict_keys(out, {"loc", "scale"}, "outlier")
    return float(out.get("loc", 100.0)), float(out.get("scale", 1.0))


def _solver_config(raw: dict, lam: float = 0.0) -> SolverConfig:
    sub = raw.get("solver", {})
    if not isinstance(sub, dict):
        raise _fail("solver must be an object")
    _strict_keys(
        sub, {"max_iter", "tol", "backtrack_shrink", "initial_step", "restart"}, "solver"
    )
    try:
        return SolverConfig(
            lam=lam,
            max_iter=int(sub.get("max_iter", 5000)),
            tol=float(sub.get("tol", 1e-8)),
            backtrack_shrink=float(sub.get("backtrack_shrink", 0.5)),
            initial_step=float(sub.get("initial_step", 1.0)),
            restart=bool(sub.get("restart", True)),
        )
    except ValueError as exc:
        raise _fail(f"solver: {exc}") from None


def _weight_config(raw: dict) -> WeightConfig:
    sub = raw.get("weight", {})
    if not isinstance(sub, dict):
        raise _fail("weight must be an object")
    try:
        return WeightConfig.from_config(sub)
    except ValueError as exc:
        raise _fail(f"weight: {exc}") from None


_EXPERIMENT_KEYS = {
    "scenario",
    "methods",
    "dims",
    "n_grid",
    "k",
    "magnitude",
    "eps",
    "eps_p",
    "eps_q",
    "outlier",
    "lambda0",
    "weight",
    "repetitions",
    "master_seed",
    "convention",
    "round_contamination",
    "solver",
}


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    _strict_keys(raw, _EXPERIMENT_KEYS, "experiment config")
    for key in ("scenario", "dims", "n_grid", "k", "magnitude", "lambda0", "repetitions", "master_seed"):
        if key not in raw:
            raise _fail(f"experiment config missing required key: {key}")
    eps_p, eps_q = _eps_lists(raw, "experiment config")
    loc, scale = _outlier_spec(raw)
    try:
        return ExperimentConfig(
            scenario=str(raw["scenario"]),
            methods=tuple(raw.get("methods", ["dre", "wdre"])),
            dims=tuple(int(m) for m in raw["dims"]),
            n_grid=tuple(int(n) for n in raw["n_grid"]),
            k=int(raw["k"]),
            magnitude=float(raw["magnitude"]),
            lambda0=float(raw["lambda0"]),
            repetitions=int(raw["repetitions"]),
            master_seed=int(raw["master_seed"]),
            eps_p=eps_p,
            eps_q=eps_q,
            outlier_loc=loc,
            outlier_scale=scale,
            weight=_weight_config(raw),
            convention=str(raw.get("convention", "direct")),
            round_contamination=bool(raw.get("round_contamination", False)),
            solver=_solver_config(raw),
        )
    except ValueError as exc:
        raise _fail(str(exc)) from None


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully materialized config; re-ingesting it reproduces the run."""
    return {
        "scenario": cfg.scenario,
        "methods": list(cfg.methods),
        "dims": list(cfg.dims),
        "n_grid": list(cfg.n_grid),
        "k": cfg.k,
        "magnitude": cfg.magnitude,
        "eps_p": list(cfg.eps_p),
        "eps_q": list(cfg.eps_q),
        "outlier": {"loc": cfg.outlier_loc, "scale": cfg.outlier_scale},
        "lambda0": cfg.lambda0,
        "weight": cfg.weight.to_config(),
        "repetitions": cfg.repetitions,
        "master_seed": cfg.master_seed,
        "convention": cfg.convention,
        "round_contamination": cfg.round_contamination,
        "solver": {
            "max_iter": cfg.solver.max_iter,
            "tol": cfg.solver.tol,
            "backtrack_shrink": cfg.solver.backtrack_shrink,
            "initial_step": cfg.solver.initial_step,
            "restart": cfg.solver.restart,
        },
    }


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_json(payload, output: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if output in (None, "-"):
        print(text)
    else:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


# ----------------------------------------------------------------- gen-data

_GEN_KEYS = {
    "m",
    "n",
    "k",
    "magnitude",
    "placement",
    "eps",
    "eps_p",
    "eps_q",
    "outlier",
    "master_seed",
}


def cmd_gen_data(args) -> int:
    raw = _load_config(args.config)
    _apply_sets(raw, args.set or [])
    _strict_keys(raw, _GEN_KEYS, "gen-data config")
    for key in ("m", "n", "k", "magnitude"):
        if key not in raw:
            raise _fail(f"gen-data config missing required key: {key}")
    m = int(raw["m"])
    n = int(raw["n"])
    eps_p, eps_q = _eps_lists(raw, "gen-data config")
    if len(eps_p) != 1:
        raise _fail("gen-data takes a single contamination level per side")
    loc, scale = _outlier_spec(raw)
    placement = raw.get("placement", "off-diagonal-disjoint")
    master_seed = int(raw["master_seed"]) if args.seed is None else args.seed
    if "master_seed" not in raw and args.seed is None:
        raise _fail("gen-data config missing required key: master_seed")

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(master_seed)
    try:
        P_p, P_q, support = make_sparse_difference(m, int(raw["k"]), float(raw["magnitude"]), placement, rng)
        fmap = FeatureMap(m)
        cont = ContaminationSpec(
            eps_p[0], eps_q[0], np.full(m, loc), scale**2 * np.eye(m)
        )
        ref = contaminate(sample_gaussian(GaussianSpec(m, P_p), n, rng), cont, "p", rng, args.round_contamination)
        tgt = contaminate(sample_gaussian(GaussianSpec(m, P_q), n, rng), cont, "q", rng, args.round_contamination)
    except ValueError as exc:
        raise _fail(str(exc)) from None
    write_dataset_csv(outdir / "reference.csv", ref)
    write_dataset_csv(outdir / "target.csv", tgt)
    truth = {
        "m": m,
        "n": n,
        "k": int(raw["k"]),
        "magnitude": float(raw["magnitude"]),
        "placement": placement,
        "eps_p": eps_p[0],
        "eps_q": eps_q[0],
        "outlier": {"loc": loc, "scale": scale},
        "master_seed": master_seed,
        "precision_p": P_p.tolist(),
        "precision_q": P_q.tolist(),
        "support": [int(t) for t in support],
        "support_pairs": [list(fmap.pair_of(int(t))) for t in support],
        "theta_direct": theta_from_matrix(fmap, P_q - P_p, "direct").theta.tolist(),
        "theta_sum_split": theta_from_matrix(fmap, P_q - P_p, "sum-split").theta.tolist(),
    }
    _write_json(outdir / "truth.json", truth)
    if not args.quiet:
        print(f"wrote {outdir / 'reference.csv'}, {outdir / 'target.csv'}, {outdir / 'truth.json'}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------- fit

_FIT_KEYS = {"method", "weight", "lambda", "lambda0", "solver", "diagnose", "theta_box"}


def _method_spec(method: str, weight_cfg: WeightConfig, m: int) -> ObjectiveSpec:
    fmap = FeatureMap(m)
    if method == "wdre":
        return ObjectiveSpec.weighted(fmap, weight_cfg.resolve(m))
    if method == "dre":
        return ObjectiveSpec.conventional(fmap)
    raise _fail(f"unknown method {method!r}, expected 'dre' or 'wdre'")


def _read_pair(reference: str, target: str) -> tuple[LabeledDataset, LabeledDataset]:
    for path in (reference, target):
        if not Path(path).exists():
            raise _fail(f"data file not found: {path}")
    try:
        ref = read_dataset_csv(reference)
        tgt = read_dataset_csv(target)
    except ValueError as exc:
        raise _fail(str(exc)) from None
    if ref.m != tgt.m:
        raise _fail(f"dimension mismatch: reference has m={ref.m}, target has m={tgt.m}")
    return ref, tgt


def _theta_box_from(raw: dict, d: int) -> ThetaBox:
    sub = raw.get("theta_box", {})
    _strict_keys(sub, {"lo", "hi"}, "theta_box")
    lo = float(sub.get("lo", -1.0))
    hi = float(sub.get("hi", 1.0))
    return ThetaBox(np.full(d, lo), np.full(d, hi))


def cmd_fit(args) -> int:
    raw = _load_config(args.config)
    _apply_sets(raw, args.set or [])
    _strict_keys(raw, _FIT_KEYS, "fit config")
    if "method" not in raw:
        raise _fail("fit config missing required key: method")
    if ("lambda" in raw) == ("lambda0" in raw):
        raise _fail("fit config needs exactly one of lambda, lambda0")
    ref, tgt = _read_pair(args.reference, args.target)
    weight_cfg = _weight_config(raw)
    spec = _method_spec(raw["method"], weight_cfg, ref.m)
    if "lambda" in raw:
        lam = float(raw["lambda"])
    else:
        lam = lambda_schedule(float(raw["lambda0"]), spec.feature_map.d, min(ref.n, tgt.n))
    cfg = _solver_config(raw, lam=lam)
    try:
        result = fit(spec, ref.samples, tgt.samples, cfg)
    except ValueError as exc:
        raise _fail(str(exc)) from None
    theta = result.theta_hat.theta
    report = {
        "method": raw["method"],
        "theta_hat": {str(int(t)): float(theta[t]) for t in result.theta_hat.support},
        "support": [int(t) for t in result.theta_hat.support],
        "objective_final": result.objective_trace[-1],
        "iterations": result.iterations,
        "converged": result.converged,
        "lambda": result.lambda_used,
    }
    if raw.get("diagnose", False):
        support = result.theta_hat.support
        if support.size:
            feats = precompute(spec, ref.samples, tgt.samples)
            report["diagnostics"] = assumption_audit(spec, feats, theta, support).to_json_dict()
        else:
            report["diagnostics"] = {"skipped": "fitted support is empty"}
    _emit_json(report, args.output)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# ----------------------------------------------------------------- diagnose

_DIAGNOSE_KEYS = {"method", "weight", "theta_box"}


def _load_theta(path: str, d: int) -> tuple[np.ndarray, np.ndarray]:
    if not Path(path).exists():
        raise _fail(f"theta file not found: {path}")
    raw = _load_config(path)
    for key in ("theta", "theta_direct"):
        if key in raw:
            theta = np.asarray(raw[key], dtype=float)
            break
    else:
        raise _fail(f"{path}: expected a 'theta' or 'theta_direct' entry")
    if theta.shape != (d,):
        raise _fail(f"{path}: theta has length {theta.size}, expected {d}")
    if "support" in raw:
        support = np.asarray(raw["support"], dtype=int)
    else:
        support = np.flatnonzero(theta != 0.0)
    return theta, support


def cmd_diagnose(args) -> int:
    raw = _load_config(args.config)
    _apply_sets(raw, args.set or [])
    _strict_keys(raw, _DIAGNOSE_KEYS, "diagnose config")
    ref, tgt = _read_pair(args.reference, args.target)
    weight_cfg = _weight_config(raw)
    spec = _method_spec(raw.get("method", "wdre"), weight_cfg, ref.m)
    d = spec.feature_map.d
    theta, support = _load_theta(args.theta, d)
    box = _theta_box_from(raw, d)

    payload: dict = {}
    if (ref.labels == "unknown").all() and (tgt.labels == "unknown").all():
        payload["leverage"] = {"skipped": "no provenance labels in the data"}
    else:
        payload["leverage"] = leverage_stats(ref, tgt, spec.weight, spec.feature_map, box, support).to_json_dict()
    if support.size == 0:
        payload["assumptions"] = {"skipped": "empty support"}
    else:
        try:
            feats = precompute(spec, ref.samples, tgt.samples)
            payload["assumptions"] = assumption_audit(spec, feats, theta, support).to_json_dict()
        except ValueError as exc:
            payload["assumptions"] = {"skipped": str(exc)}
    _emit_json(payload, args.output)
    return EXIT_OK


# --------------------------------------------------------------- experiment


def resolve_experiment_args(args) -> ExperimentConfig:
    """Config file plus flag overrides, fully materialized."""
    raw = _load_config(args.config)
    _apply_sets(raw, args.set or [])
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.methods is not None:
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.paper_scale:
        raw["dims"] = list(_PAPER_SCALE_DIMS)
        raw["repetitions"] = _PAPER_SCALE_REPS
    if args.round_contamination:
        raw["round_contamination"] = True
    return experiment_config_from_dict(raw)


def cmd_experiment(args) -> int:
    cfg = resolve_experiment_args(args)
    try:
        cfg.validate_cells()
    except ValueError as exc:
        raise _fail(str(exc)) from None

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    grid = run_grid(cfg, threads=args.threads, log=log, timing=args.timing)
    write_results_csv(outdir / "results.csv", list(grid.cells))
    _write_json(outdir / "resolved_config.json", experiment_config_to_dict(cfg))
    if not args.quiet:
        print(f"wrote {outdir / 'results.csv'} ({len(grid.cells)} cells)", file=sys.stderr)
    if not grid.complete:
        for cell, err in grid.failures:
            print(f"failed cell {cell.label()}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# --------------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wdre",
        description="Robust sparse density-ratio estimation: data, fits, grids, audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output_default=None, output_help="output path"):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (dotted keys)")
        p.add_argument("--output", default=output_default, help=output_help)
        p.add_argument("--quiet", "-q", action="store_true", help="suppress progress output")

    p = sub.add_parser("gen-data", help="write reference.csv, target.csv and truth.json")
    common(p, output_default=".", output_help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--round-contamination", action="store_true", help="round non-integral outlier counts")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit one dataset pair and report the estimate")
    common(p, output_default="-", output_help="report file, '-' for stdout")
    p.add_argument("--reference", required=True, help="reference-side CSV")
    p.add_argument("--target", required=True, help="target-side CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("experiment", help="run a Monte-Carlo grid and write results.csv")
    common(p, output_default=".", output_help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--methods", default=None, help="comma-separated subset of dre,wdre")
    p.add_argument("--paper-scale", action="store_true", help="restore dims 50,100,200 and 200 repetitions")
    p.add_argument("--round-contamination", action="store_true", help="round non-integral outlier counts")
    p.add_argument("--timing", action="store_true", help="record wall seconds in the CSV (breaks byte reproducibility)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("diagnose", help="leverage and assumption audits for a dataset pair")
    common(p, output_default="-", output_help="report file, '-' for stdout")
    p.add_argument("--reference", required=True, help="reference-side CSV")
    p.add_argument("--target", required=True, help="target-side CSV")
    p.add_argument("--theta", required=True, help="JSON file with theta (or truth.json)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BrokenPipeError:
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
