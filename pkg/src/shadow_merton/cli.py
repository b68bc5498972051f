"""Command-line interface: ``shadow-merton {solve,simulate,evaluate,sweep}``.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 provenance
mismatch, 5 failed acceptance check.  Every command writes a JSON manifest
next to its outputs; wall-clock data sits under its ``timing`` key, which is
left out of the manifest digest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import ProvenanceError, SolverError, ValidationError
from .evaluation import (WedgePolicy, combined_stderr, dp_oracle, mc_utility,
                         mid_fraction_bounds, paired_difference, perturbation_test,
                         resolve_threads, simulate_wedge_policies, sweep_costs,
                         width_nondecreasing, write_sweep_csv)
from .fbvp import FreeBoundarySolution, shoot
from .market import MarketParams, frictionless_value, merton_constants, validate
from .reflected import initial_beta, simulate_beta
from .shadow import ShadowCoefficients
from .strategy import run_strategy, self_financing_audit

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_PROVENANCE, EXIT_ACCEPTANCE = 0, 2, 3, 4, 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, params: dict, settings: dict, seeds, inputs, outputs,
                   counts: dict, started: float) -> dict:
    body = {
        "command": command,
        "version": __version__,
        "params": params,
        "settings": settings,
        "seeds": seeds,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "counts": counts,
    }
    body["digest"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    body["timing"] = {
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_seconds": time.time() - started,
    }
    Path(path).write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    return body


def _market_args(p, required: bool):
    for flag in ("--mu", "--sigma", "--delta", "--lambda-buy", "--lambda-sell"):
        p.add_argument(flag, type=float, required=False, default=None,
                       help="required" if required else "optional consistency check")


def _endowment_args(p):
    p.add_argument("--eta-b", type=float, default=None, help="initial bond holdings")
    p.add_argument("--eta-s", type=float, default=None, help="initial share holdings")
    p.add_argument("--s0", type=float, default=None, help="initial stock price")


def _mc_args(p):
    p.add_argument("--solution", required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shadow-merton", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the free boundary problem")
    p.add_argument("--config", help="key = value file of option defaults")
    _market_args(p, True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default="solution.json")

    p = sub.add_parser("simulate", help="simulate paths of the optimal strategy")
    p.add_argument("--config", help="key = value file of option defaults")
    _mc_args(p)
    _market_args(p, False)
    _endowment_args(p)
    p.add_argument("--out-dir", default="simulation")
    p.add_argument("--aggregate", action="store_true",
                   help="one summary table instead of per-path series")

    p = sub.add_parser("evaluate", help="utility estimates and acceptance checks")
    p.add_argument("--config", help="key = value file of option defaults")
    _mc_args(p)
    _market_args(p, False)
    _endowment_args(p)
    p.add_argument("--perturb", default="", help="comma list of relative boundary shifts")
    p.add_argument("--oracle", action="store_true", help="cross-check with the DP oracle")
    p.add_argument("--oracle-grid", type=int, default=400)
    p.add_argument("--out", default="report.json")

    p = sub.add_parser("sweep", help="tabulate the solution over cost levels")
    p.add_argument("--config", help="key = value file of option defaults")
    for flag in ("--mu", "--sigma", "--delta"):
        p.add_argument(flag, type=float, default=None, help="required")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--lambdas", help="comma list, applied to both sides")
    g.add_argument("--lambda-pairs", help="CSV file of lambda_buy,lambda_sell rows")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default="sweep.csv")
    return parser


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment, keys may use dashes or underscores."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    conf = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"config line {n}: expected key = value")
        conf[key.strip().replace("-", "_")] = value.strip()
    return conf


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` so explicit flags still win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        conf = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        unknown = set(conf) - set(actions) - {"config"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        defaults = {}
        for key, value in conf.items():
            if isinstance(actions[key], argparse._StoreTrueAction):
                if value.lower() not in ("true", "false"):
                    raise ValidationError(f"config key {key}: expected true or false")
                defaults[key] = value.lower() == "true"
            else:
                # argparse applies the option's type to string defaults
                defaults[key] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _params_from_args(args) -> MarketParams:
    names = ("mu", "sigma", "delta", "lambda_buy", "lambda_sell")
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ValidationError("missing " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return validate(MarketParams(**{n: float(getattr(args, n)) for n in names}))


def _load_solution(args) -> tuple[FreeBoundarySolution, MarketParams]:
    try:
        text = Path(args.solution).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read solution: {exc}") from exc
    try:
        sol = FreeBoundarySolution.from_json(text)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed solution file: {exc}") from exc
    params = sol.params
    given = {n: getattr(args, n) for n in ("mu", "sigma", "delta", "lambda_buy", "lambda_sell")}
    if any(v is not None for v in given.values()):
        check = MarketParams(**{n: float(v if v is not None else getattr(params, n))
                                for n, v in given.items()})
        if check.fingerprint() != sol.param_hash:
            raise ProvenanceError("parameters do not match the solution file")
    params = params.with_endowment(
        params.eta_b if args.eta_b is None else args.eta_b,
        params.eta_s if args.eta_s is None else args.eta_s,
        params.s0 if args.s0 is None else args.s0)
    return sol, validate(params)


def _check_mc(args):
    if args.paths < 1:
        raise ValidationError("--paths must be positive")
    if not args.dt > 0:
        raise ValidationError("--dt must be positive")
    if not args.horizon > 0:
        raise ValidationError("--horizon must be positive")
    if args.threads is not None:
        resolve_threads(args.threads)


def cmd_solve(args) -> int:
    started = time.time()
    params = _params_from_args(args)
    sol = shoot(params, tol=args.tol)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(sol.to_json())
    lo, hi = sol.fraction_bounds
    print(json.dumps({"beta_lo": sol.beta_lo, "beta_hi": sol.beta_hi, "pi_lo": lo, "pi_hi": hi,
                      "delta_star": sol.delta_star}))
    write_manifest(out.with_name(out.name + ".manifest.json"), "solve", params.to_dict(),
                   {"tol": args.tol}, [], [], [out], {"grid_nodes": int(sol.grid.shape[0])},
                   started)
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.time()
    _check_mc(args)
    sol, params = _load_solution(args)
    coeffs = ShadowCoefficients.from_solution(sol, params)
    beta0, _ = initial_beta(params, sol)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, rows = [], []
    for i in range(args.paths):
        path = simulate_beta(coeffs, beta0, args.horizon, args.dt, seed=(args.seed, i))
        outcome = run_strategy(sol, params, path)
        if args.aggregate:
            rows.append([i, args.seed, outcome.utility, outcome.v_tilde[-1],
                         outcome.liquidation[-1], outcome.big_l[-1], outcome.big_u[-1],
                         self_financing_audit(outcome, params), outcome.fraction_gap])
        else:
            for name, writer in ((f"path_{i:05d}.csv", path.to_csv),
                                 (f"outcome_{i:05d}.csv", outcome.to_csv)):
                writer(out_dir / name)
                outputs.append(out_dir / name)
            summary = out_dir / f"summary_{i:05d}.json"
            summary.write_text(outcome.summary_json(params) + "\n")
            outputs.append(summary)
    if args.aggregate:
        agg = out_dir / "aggregate.csv"
        with open(agg, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "seed", "utility", "v_tilde_T", "liquidation_T", "big_l_T",
                        "big_u_T", "audit", "fraction_gap"])
            for r in rows:
                w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
        outputs.append(agg)
    n_steps = int(round(args.horizon / args.dt))
    write_manifest(out_dir / "manifest.json", "simulate", params.to_dict(),
                   {"paths": args.paths, "horizon": args.horizon, "dt": args.dt,
                    "aggregate": args.aggregate},
                   {"seed_base": args.seed,
                    "substreams": {str(i): [args.seed, i, 0] for i in range(args.paths)}},
                   [Path(args.solution)], outputs,
                   {"paths": args.paths, "steps_per_path": n_steps}, started)
    return EXIT_OK


def evaluate_report(sol, params, n_paths, horizon, dt, seed, shifts=(), oracle_grid=None,
                    threads=None) -> dict:
    """Estimates, competitor comparisons and pass/fail flags as one JSON-ready dict."""
    est = mc_utility(sol, params, n_paths, horizon, dt, seed, threads=threads)
    bench = frictionless_value(params, params.initial_wealth)
    pi_star, _ = merton_constants(params)
    competitors = {
        "merton_rebalancing": WedgePolicy(pi_star, pi_star, valuation_rule="mid"),
        "wide_wedge": WedgePolicy(0.01, 0.99),
        "shadow_boundaries": WedgePolicy.from_solution(sol, wealth_proxy="shadow"),
    }
    pols = list(competitors.values())
    table = None
    if shifts:
        # the liquidation-proxy competitors share the perturbation batch
        table = perturbation_test(sol, params, shifts, n_paths, horizon, dt, seed,
                                  extra=pols[:2], threads=threads)
        comp_est = list(table.extra)
    else:
        comp_est = simulate_wedge_policies(params, pols[:2], horizon, dt, seed, n_paths,
                                           threads=threads)
    comp_est += simulate_wedge_policies(params, pols[2:], horizon, dt, seed, n_paths, sol=sol,
                                        threads=threads)
    report = {
        "params": params.to_dict(),
        "settings": {"paths": n_paths, "horizon": horizon, "dt": dt, "seed": seed},
        "estimates": {"shadow_policy": est.to_dict()},
        "bounds": {"frictionless_value": bench, "tail_bound": est.tail_bound},
        "competitors": {},
        "flags": {},
    }
    report["flags"]["benchmark"] = est.mean <= bench + 2 * est.stderr
    for (name, pol), ce in zip(competitors.items(), comp_est):
        diff, dse = paired_difference(est, ce)
        cse = combined_stderr(est, ce)
        report["competitors"][name] = {
            "pi_lo": pol.pi_lo, "pi_hi": pol.pi_hi, "valuation_rule": pol.valuation_rule,
            "wealth_proxy": pol.wealth_proxy,
            "estimate": ce.to_dict(), "gap": diff, "combined_stderr": cse,
            "paired_stderr": dse}
        if name != "shadow_boundaries":
            report["flags"][f"dominates_{name}"] = diff >= 3 * cse
        else:
            report["flags"]["simulators_agree"] = abs(diff) <= 2 * cse
    if table is not None:
        report["perturbation"] = [{"shift": r.shift, "pi_lo": r.pi_lo, "pi_hi": r.pi_hi,
                                   "mean": r.estimate.mean, "stderr": r.estimate.stderr,
                                   "diff": r.diff, "diff_stderr": r.diff_stderr}
                                  for r in table.rows]
        report["flags"]["perturbation_base_is_max"] = table.base_is_max
        report["diagnostics"] = {"monotone_down": table.monotone_down,
                                 "monotone_up": table.monotone_up}
    if oracle_grid:
        res = dp_oracle(params, oracle_grid)
        ref = mid_fraction_bounds(sol)
        tol = [max(2 * res.cell, 0.01 * r) for r in ref]
        err = [abs(res.pi_lo - ref[0]), abs(res.pi_hi - ref[1])]
        report["oracle"] = {"pi_lo": res.pi_lo, "pi_hi": res.pi_hi, "cell": res.cell,
                            "fbvp_mid": list(ref), "error": err, "tolerance": tol,
                            "error_cells": [e / res.cell for e in err]}
        report["flags"]["oracle_agreement"] = all(e <= t for e, t in zip(err, tol))
    report["flags"] = {k: bool(v) for k, v in report["flags"].items()}
    return report


def cmd_evaluate(args) -> int:
    started = time.time()
    _check_mc(args)
    sol, params = _load_solution(args)
    try:
        shifts = [float(x) for x in args.perturb.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --perturb list: {exc}") from exc
    report = evaluate_report(sol, params, args.paths, args.horizon, args.dt, args.seed, shifts,
                             args.oracle_grid if args.oracle else None, args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    write_manifest(out.with_name(out.name + ".manifest.json"), "evaluate", params.to_dict(),
                   report["settings"], {"seed_base": args.seed}, [Path(args.solution)], [out],
                   {"paths": args.paths, "steps_per_path": int(round(args.horizon / args.dt))},
                   started)
    failed = [k for k, v in report["flags"].items() if not v]
    if failed:
        print("acceptance flags failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _read_pairs(path) -> list:
    pairs = []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    pairs.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    if pairs:
                        raise
                    continue  # header line
    except (OSError, ValueError, IndexError) as exc:
        raise ValidationError(f"cannot read lambda pairs: {exc}") from exc
    return pairs


def cmd_sweep(args) -> int:
    started = time.time()
    names = ("mu", "sigma", "delta")
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ValidationError("missing " + ", ".join("--" + m for m in missing))
    base = MarketParams(args.mu, args.sigma, args.delta, 0.0, 0.0)
    if args.lambdas is not None:
        try:
            lams = [float(x) for x in args.lambdas.split(",") if x.strip()]
        except ValueError as exc:
            raise ValidationError(f"bad --lambdas list: {exc}") from exc
        inputs = []
    else:
        lams = _read_pairs(args.lambda_pairs)
        inputs = [Path(args.lambda_pairs)]
    if not lams:
        raise ValidationError("no cost levels given")
    rows = sweep_costs(base, lams, tol=args.tol)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out)
    n_err = sum(1 for r in rows if r["error"])
    for r in rows:
        if r["error"]:
            print(f"lambda=({r['lambda_buy']}, {r['lambda_sell']}): {r['error']}", file=sys.stderr)
    write_manifest(out.with_name(out.name + ".manifest.json"), "sweep",
                   {"mu": args.mu, "sigma": args.sigma, "delta": args.delta},
                   {"tol": args.tol, "levels": [list(x) if isinstance(x, tuple) else x
                                                for x in lams]},
                   [], inputs, [out],
                   {"rows": len(rows), "errors": n_err,
                    "width_nondecreasing": width_nondecreasing(rows)}, started)
    return EXIT_SOLVER if n_err == len(rows) else EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProvenanceError as exc:
        print(f"provenance error: {exc}", file=sys.stderr)
        return EXIT_PROVENANCE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
