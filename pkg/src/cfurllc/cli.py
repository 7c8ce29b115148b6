"""Command-line entry point.

Exit codes: 0 on success, 2 when every result is infeasible, 1 on error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import EXPERIMENTS, ExperimentConfig, compare_baselines, load_config, run_experiment
from .fcbl import QosSpec, lambda_gain, lb_rate, sinr_lb
from .model import NetworkInstance, PowerBudget, PowerProfile, generate_instance, substream
from .pilot import PilotAssignment, admitted_set, assign_pilots_iterative, build_conflict_matrix, dsatur_color, orthogonal_assignment
from .power import InfeasibleQos, SolverFailure, feasibility_init, maximize_wsr, sinr_thresholds

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

log = logging.getLogger("cfurllc")


def _emit(doc, path):
    text = json.dumps(doc, indent=2)
    if path and path != "-":
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _instance_args(p):
    p.add_argument("--instance", help="instance JSON (otherwise one is generated)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--N", type=int, default=9)
    p.add_argument("--area-km", type=float, default=0.2)
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--bandwidth", type=float, default=1e6)


def _qos_args(p):
    p.add_argument("--epsilon", type=float, default=1e-7)
    p.add_argument("--rate-req", type=float, default=0.75)
    p.add_argument("--L", type=int, default=100)
    p.add_argument("--weights", choices=["uniform", "ones"], default="uniform", help="random in [0, 1] from the seed, or all ones")
    p.add_argument("--pilot-max", type=float, default=0.1)
    p.add_argument("--ap-max", type=float, default=0.2)


def _pilot_args(p):
    p.add_argument("--scheme", choices=["proposed", "dsatur", "orthogonal"], default="proposed")
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--iota", type=int, default=4)
    p.add_argument("--max-iters", type=int, default=20)


def _load_instance(args) -> NetworkInstance:
    if args.instance:
        return NetworkInstance.from_json(Path(args.instance).read_text())
    return generate_instance(args.seed, M=args.M, K=args.K, N=args.N, area_km=args.area_km, threshold=args.threshold, bandwidth=args.bandwidth)


def _qos(args, instance, tau=1) -> QosSpec:
    K = instance.K
    w = substream(args.seed, "weights").uniform(0.0, 1.0, K) if args.weights == "uniform" else np.ones(K)
    return QosSpec(np.full(K, args.epsilon), np.full(K, args.rate_req), w, args.L, tau)


def _budget(args, instance) -> PowerBudget:
    return PowerBudget.uniform(instance, args.pilot_max, args.ap_max)


def _assign(args, instance, qos, budget):
    if getattr(args, "assignment", None):
        return PilotAssignment.from_dict(json.loads(Path(args.assignment).read_text())), None
    if args.scheme == "orthogonal":
        return orthogonal_assignment(instance.K, build_conflict_matrix(instance)), None
    if args.scheme == "dsatur":
        return dsatur_color(build_conflict_matrix(instance), args.n_max), None
    res = assign_pilots_iterative(instance, qos, args.n_max, args.iota, args.max_iters, budget)
    return res.assignment, res


def cmd_gen(args):
    instance = _load_instance(args)
    _emit(instance.to_dict(), args.output)
    return EXIT_OK


def cmd_pilot(args):
    instance = _load_instance(args)
    budget = _budget(args, instance)
    qos = _qos(args, instance)
    assignment, res = _assign(args, instance, qos, budget)
    doc = assignment.to_dict()
    doc["admitted"] = admitted_set(instance, assignment, qos, budget).tolist()
    if res is not None:
        doc["history"] = res.history
        doc["dsatur_tau"] = res.baseline.tau
        doc["iterations"] = res.iterations
    _emit(doc, args.output)
    return EXIT_OK


def cmd_power(args):
    instance = _load_instance(args)
    budget = _budget(args, instance)
    assignment, _ = _assign(args, instance, _qos(args, instance), budget)
    qos = _qos(args, instance, assignment.tau)
    try:
        feas = feasibility_init(instance, qos, assignment.groups, budget, fixed_pilot=args.fixed_pilot, stop_when_feasible=True)
        res = maximize_wsr(instance, qos, assignment.groups, budget, args.zeta, fixed_pilot=args.fixed_pilot, feasibility=feas)
    except InfeasibleQos as exc:
        _emit({"status": "infeasible", "rho": exc.rho, "assignment": assignment.to_dict()}, args.output)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    doc = {"status": "ok", "assignment": assignment.to_dict(), **res.to_dict(), "iterations": res.iterations}
    _emit(doc, args.output)
    return EXIT_OK


def cmd_validate(args):
    """Check an assignment and optional power profile against every invariant."""
    instance = _load_instance(args)
    budget = _budget(args, instance)
    problems = []
    assignment, _ = _assign(args, instance, _qos(args, instance), budget)
    problems += assignment.violations(assignment.conflict if assignment.conflict is not None else build_conflict_matrix(instance))
    qos = _qos(args, instance, assignment.tau)
    report = {"tau": assignment.tau}
    if args.powers:
        doc = json.loads(Path(args.powers).read_text())
        doc = doc.get("powers", doc)
        profile = PowerProfile(np.asarray(doc["pilot"], float), np.asarray(doc["downlink"], float))
        pilot_slack, ap_slack = profile.cap_slack(instance, budget)
        report.update(pilot_slack=pilot_slack, ap_slack=ap_slack)
        if min(pilot_slack, ap_slack) < -1e-9:
            problems.append(f"power cap violated (slack {min(pilot_slack, ap_slack):.3g})")
        gamma = sinr_lb(instance, lambda_gain(qos.tau, profile.pilot, instance.beta, assignment.groups), profile.downlink, assignment.groups)
        short = np.flatnonzero(gamma < sinr_thresholds(qos) * (1 - 1e-6))
        if short.size:
            problems.append(f"devices {short.tolist()} below their SINR threshold")
        report["wsr"] = float(qos.weight @ lb_rate(gamma, qos))
        if args.mc_samples:
            from .montecarlo import ergodic_rate_mc

            est = ergodic_rate_mc(instance, profile, qos, assignment.groups, args.mc_samples, args.seed)
            lb = lb_rate(gamma, qos)
            bad = np.flatnonzero(est.mean < lb - 3 * est.stderr)
            if bad.size:
                problems.append(f"Monte-Carlo rate below the bound for devices {bad.tolist()}")
            report["mc_rate"] = est.mean.tolist()
            report["lb_rate"] = lb.tolist()
    report["problems"] = problems
    report["valid"] = not problems
    _emit(report, args.output)
    return EXIT_OK if not problems else EXIT_ERROR


def _add_config_flags(p):
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "experiment":
            continue
        if f.type == "list":
            conv = str if f.name in ("schemes", "metrics") else int
            p.add_argument(flag, dest=f.name, nargs="+", type=conv, default=None)
        elif f.type == "bool":
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            conv = {"int": int, "float": float, "str": str}[f.type]
            p.add_argument(flag, dest=f.name, type=conv, default=None)


def cmd_experiment(args):
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(ExperimentConfig) if f.name != "experiment" and getattr(args, f.name) is not None}
    if args.config:
        base = load_config(args.config)
        name = args.experiment or base.experiment
        doc = {**base.to_dict(), **overrides, "experiment": name}
        cfg = ExperimentConfig(**doc) if name == base.experiment else ExperimentConfig.preset(name, **overrides)
    else:
        cfg = ExperimentConfig.preset(args.experiment or "custom", **overrides)
    if args.compare:
        table = compare_baselines(cfg)
        for row in table:
            print(json.dumps(row))
        return EXIT_OK
    result = run_experiment(cfg)
    print(f"wrote {result.csv_path} ({len(result.rows)} rows) and {result.manifest_path}")
    print("status counts: " + ", ".join(f"{k}={v}" for k, v in sorted(result.statuses.items())))
    return EXIT_INFEASIBLE if result.all_infeasible else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfurllc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a network instance")
    _instance_args(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pilot", help="assign pilots")
    _instance_args(p)
    _qos_args(p)
    _pilot_args(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_pilot)

    p = sub.add_parser("power", help="maximise the weighted sum rate")
    _instance_args(p)
    _qos_args(p)
    _pilot_args(p)
    p.add_argument("--assignment", help="pilot assignment JSON from the pilot subcommand")
    p.add_argument("--fixed-pilot", action="store_true", help="keep pilot powers at their caps")
    p.add_argument("--zeta", type=float, default=0.01)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("validate", help="check an assignment and power profile")
    _instance_args(p)
    _qos_args(p)
    _pilot_args(p)
    p.add_argument("--assignment")
    p.add_argument("--powers", help="JSON with pilot/downlink arrays (e.g. power subcommand output)")
    p.add_argument("--mc-samples", type=int, default=0, help="also compare against a Monte-Carlo rate estimate")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("experiment", help="run a figure sweep")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON or TOML file with ExperimentConfig fields")
    p.add_argument("--compare", action="store_true", help="run the paired baseline comparison instead")
    _add_config_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
