"""Command-line driver: experiment orchestration and artifact emission.

Subcommands: assimilate, consistency, stability, condition.  Exit codes:
0 success, 2 configuration error, 3 solver failure.  All floats in CSV
artifacts are printed with 6 significant digits; identical configurations
and seeds produce byte-identical files.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from ._validation import ConfigError, ConvergenceError
from .analysis import (condition_numbers, consistency_sweep, stability_sweep,
                       verify_minimum_equality)
from .experiment import build_experiment, dd_estimator, global_estimator, load_config
from .observations import observations_to_csv


def _fmt(value):
    return f"{float(value):.5e}"


def _prepare_path(out_dir, name, overwrite):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    if os.path.exists(path) and not overwrite:
        raise ConfigError(f"refusing to overwrite {path}; pass --overwrite")
    return path


def _write_csv(out_dir, name, header, rows, overwrite):
    path = _prepare_path(out_dir, name, overwrite)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _write_json(out_dir, name, payload, overwrite):
    path = _prepare_path(out_dir, name, overwrite)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _apply_overrides(cfg, args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["directory"] = args.out
    return cfg.replace(**overrides) if overrides else cfg


def cmd_assimilate(cfg, args):
    exp = build_experiment(cfg)
    oracle = global_estimator(exp).fit(exp.background_initial, exp.observations.values)
    dd = dd_estimator(exp).fit(exp.background_initial, exp.observations.values)
    report = verify_minimum_equality(oracle, dd)

    out = cfg.directory
    obs_path = _prepare_path(out, "observations.csv", args.overwrite)
    observations_to_csv(exp.observations, obs_path)

    rows = []
    for l in range(exp.domain.n):
        for node in range(exp.domain.n_p):
            rows.append([node + 1, l + 1,
                         _fmt(oracle.background_[node, l]),
                         _fmt(oracle.analysis_[node, l]),
                         _fmt(dd.analysis_[node, l])])
    _write_csv(out, "analysis.csv",
               ["node", "instant", "background", "analysis_global", "analysis_dd"],
               rows, args.overwrite)

    rows = []
    for n, j in enumerate(dd.j_history_):
        norm = _fmt(dd.update_norms_[n - 1]) if n >= 1 else ""
        rows.append([n, _fmt(j), norm])
    _write_csv(out, "j_history.csv", ["outer", "j", "update_norm"], rows,
               args.overwrite)

    rows = [[row["outer"], row["slab"], row["sweep"], row["subdomain"],
             row["cg_iterations"], _fmt(row["cg_residual"]), _fmt(row["local_cost"])]
            for row in dd.diagnostics_]
    _write_csv(out, "diagnostics.csv",
               ["outer", "slab", "sweep", "subdomain", "cg_iterations",
                "cg_residual", "local_cost"],
               rows, args.overwrite)

    _write_json(out, "equality.json", report, args.overwrite)
    return 0


def cmd_consistency(cfg, args):
    d_values = args.d_list
    if not d_values:
        raise ConfigError("consistency requires a nonempty --d-list")
    rows, slope = consistency_sweep(cfg, d_values)
    out = cfg.directory
    _write_csv(out, "consistency.csv",
               ["d", "dx", "dt", "e_p", "e_p_predicted"],
               [[row.d, _fmt(row.dx), _fmt(row.dt), _fmt(row.e_p),
                 _fmt(row.e_p_predicted)] for row in rows],
               args.overwrite)
    _write_json(out, "consistency.json",
                {"d_values": [row.d for row in rows],
                 "e_p": [row.e_p for row in rows],
                 "fitted_order": slope},
                args.overwrite)
    return 0


def cmd_stability(cfg, args):
    perturbations = args.perturbations
    if not perturbations:
        raise ConfigError("stability requires a nonempty --perturbations list")
    rows = stability_sweep(cfg, perturbations, slab=args.slab)
    out = cfg.directory
    _write_csv(out, "stability.csv",
               ["e_bar", "e_propagated", "ratio"],
               [[_fmt(row.e_bar), _fmt(row.e_propagated), _fmt(row.ratio)]
                for row in rows],
               args.overwrite)
    ratios = [row.ratio for row in rows]
    mean_ratio = float(np.mean(ratios))
    _write_json(out, "stability.json",
                {"c_k": mean_ratio,
                 "max_ratio": max(ratios), "min_ratio": min(ratios),
                 "spread": (max(ratios) - min(ratios)) / mean_ratio
                 if mean_ratio else 0.0},
                args.overwrite)
    return 0


def cmd_condition(cfg, args):
    exp = build_experiment(cfg)
    report = condition_numbers(exp.decomposition, exp.background_covariance,
                               exp.operator, exp.config.sigma_o2, exp.model,
                               window=exp.config.window)
    out = cfg.directory
    rows = [[row["subdomain"], row["slab"], _fmt(row["mu_v"]), _fmt(row["mu_g"]),
             _fmt(row["mu_m"]),
             _fmt(row["mu_v_ij"]) if row["mu_v_ij"] is not None else "",
             row["adjacency"], _fmt(row["mu_dd"])]
            for row in report.rows]
    _write_csv(out, "condition.csv",
               ["subdomain", "slab", "mu_v", "mu_g", "mu_m", "mu_v_ij",
                "adjacency", "mu_dd"],
               rows, args.overwrite)
    _write_json(out, "condition.json",
                {"global": report.global_rows,
                 "max_mu_dd": max(row["mu_dd"] for row in report.rows)},
                args.overwrite)
    return 0


def _parse_int_list(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")


def _parse_float_list(text):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals: {exc}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dd4dvar",
        description="Domain-decomposition 4DVAR assimilation and error analysis")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("assimilate", "run the global and DD solvers, write analyses"),
            ("consistency", "grid-refinement consistency sweep"),
            ("stability", "initial-condition perturbation sweep"),
            ("condition", "condition-number report")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to JSON config")
        cmd.add_argument("--out", default=None, help="output directory override")
        cmd.add_argument("--seed", type=int, default=None,
                         help="observation seed override")
        cmd.add_argument("--overwrite", action="store_true",
                         help="allow overwriting existing artifacts")
        if name == "consistency":
            cmd.add_argument("--d-list", type=_parse_int_list, default=[1, 2, 4],
                             help="comma-separated refinement factors")
        if name == "stability":
            cmd.add_argument("--perturbations", type=_parse_float_list,
                             default=[3.03e-6, 3.03e-5, 3.03e-4, 3.03e-3],
                             help="comma-separated perturbation sizes")
            cmd.add_argument("--slab", type=int, default=None,
                             help="1-based slab to measure (default: last)")
    return parser


COMMANDS = {
    "assimilate": cmd_assimilate,
    "consistency": cmd_consistency,
    "stability": cmd_stability,
    "condition": cmd_condition,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        # NotSPDError and CFLViolationError land here: both trace back to
        # configuration choices (correlation scale, wave speed vs grid)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
