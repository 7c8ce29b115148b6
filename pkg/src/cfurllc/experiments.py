"""Seeded parameter sweeps that regenerate the evaluation figures as data.

Every experiment writes a long-format CSV with one row per
(sweep point, seed, metric) and a JSON manifest.  A run that cannot meet
its QoS targets still emits its rows, with ``NaN`` values and a status
naming the reason.  Only ``fig8`` counts such a run as zero weighted sum
rate, because that figure averages over all drops.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .fcbl import InfeasibleRequirement, QosSpec, lambda_gain, lb_rate, sinr_lb
from .model import PowerBudget, equal_power_profile, generate_instance, substream
from .pilot import admitted_set, assign_pilots_iterative, build_conflict_matrix, dsatur_color, orthogonal_assignment
from .power import InfeasibleQos, SolverFailure, feasibility_init, maximize_wsr

log = logging.getLogger(__name__)

EXPERIMENTS = ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "custom")
PILOT_SCHEMES = ("proposed", "dsatur", "orthogonal")
POWER_SCHEMES = ("joint", "fixed-pilot", "equal")
CSV_COLUMNS = ("experiment", "seed", "sweep_name", "sweep_value", "metric", "value", "status")

# Per-figure defaults; anything not listed falls back to the dataclass defaults.
PRESETS = {
    "fig3": {"K_list": [10], "N_list": [1, 4, 9, 16], "schemes": ["proposed/equal"], "metrics": ["wsr_lb", "wsr_mc", "wsr_mc_stderr"], "seeds": 20},
    "fig4": {"K_list": [5, 10, 15, 20, 25, 30, 35, 40], "schemes": ["proposed", "dsatur", "orthogonal"], "metrics": ["admitted_prob"], "seeds": 100},
    "fig5": {"K_list": [5, 10, 15, 20, 25, 30, 35, 40], "schemes": ["proposed", "dsatur", "orthogonal"], "metrics": ["tau"], "seeds": 100},
    "fig6": {"K_list": [20], "schemes": ["proposed/joint"], "metrics": ["wsr_history", "iterations"], "seeds": 20},
    "fig7": {"K_list": [10, 20], "schemes": ["orthogonal/joint", "proposed/joint"], "metrics": ["wsr"], "rate_req": 0.5, "seeds": 30},
    "fig8": {
        "K_list": [4, 8, 12, 16, 20, 24, 28],
        "schemes": ["orthogonal/joint", "orthogonal/fixed-pilot", "proposed/joint", "proposed/fixed-pilot"],
        "metrics": ["wsr"],
        "rate_req": 0.5,
        "seeds": 30,
        "zero_infeasible": True,
    },
    "custom": {},
}

BASELINES = ["proposed/joint", "proposed/fixed-pilot", "orthogonal/joint", "orthogonal/fixed-pilot", "dsatur/joint"]
BASELINE_PAIRS = [
    ("proposed/joint", "proposed/fixed-pilot"),
    ("proposed/joint", "orthogonal/joint"),
    ("proposed/joint", "dsatur/joint"),
    ("orthogonal/joint", "orthogonal/fixed-pilot"),
]


@dataclass
class ExperimentConfig:
    """Sweep definition plus physical parameters (powers in watts)."""

    experiment: str = "custom"
    seeds: int = 10
    seed_offset: int = 0
    K_list: list = field(default_factory=lambda: [20])
    N_list: list = field(default_factory=lambda: [9])
    M: int = 16
    schemes: list = field(default_factory=lambda: ["proposed/joint"])
    metrics: list = field(default_factory=lambda: ["wsr", "tau", "admitted_prob", "iterations"])
    bandwidth: float = 1e6
    L: int = 100
    epsilon: float = 1e-7
    rate_req: float = 0.75
    threshold: float = 0.75
    area_km: float = 0.2
    n_max: int = 4
    iota: int = 4
    max_iters: int = 20
    ap_max: float = 0.2
    pilot_max: float = 0.1
    zeta: float = 0.01
    history_len: int = 10
    mc_samples: int = 1000
    zero_infeasible: bool = False
    workers: int = 1
    output_dir: str = "results"

    @classmethod
    def preset(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in PRESETS:
            raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        return cls(experiment=experiment, **{**PRESETS[experiment], **overrides})

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        for s in self.schemes:
            _parse_scheme(s)
        if not 1 <= min(self.K_list):
            raise ValueError("K values must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        experiment = doc.get("experiment", "custom")
        rest = {k: v for k, v in doc.items() if k != "experiment"}
        return cls.preset(experiment, **rest)

    def config_hash(self) -> str:
        """Hash of everything that can change results (not workers or paths)."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("workers", "output_dir")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read a JSON or TOML experiment config."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(raw.decode())
    else:
        doc = json.loads(raw)
    return ExperimentConfig.from_dict(doc)


def _parse_scheme(scheme: str):
    pilot_name, _, power_name = scheme.partition("/")
    power_name = power_name or "equal"
    if pilot_name not in PILOT_SCHEMES or power_name not in POWER_SCHEMES:
        raise ValueError(f"bad scheme {scheme!r}; expected <{'|'.join(PILOT_SCHEMES)}>[/<{'|'.join(POWER_SCHEMES)}>]")
    return pilot_name, power_name


def _sweep_points(cfg: ExperimentConfig):
    """(sweep_name, sweep_value, K, N) tuples in output order."""
    if cfg.experiment == "fig3":
        name = "MN" if len(cfg.K_list) == 1 else None
        return [(name or f"MN@K={K}", cfg.M * N, K, N) for K in cfg.K_list for N in cfg.N_list]
    return [("K", K, K, N) for N in cfg.N_list for K in cfg.K_list]


def _qos(cfg: ExperimentConfig, K: int, seed: int, tau: int = 1) -> QosSpec:
    weights = substream(seed, "weights").uniform(0.0, 1.0, size=K)
    return QosSpec(np.full(K, cfg.epsilon), np.full(K, cfg.rate_req), weights, cfg.L, tau)


def _assignment(name, instance, qos, cfg, budget):
    if name == "orthogonal":
        return orthogonal_assignment(instance.K)
    if name == "dsatur":
        return dsatur_color(build_conflict_matrix(instance), cfg.n_max)
    return assign_pilots_iterative(instance, qos, cfg.n_max, cfg.iota, cfg.max_iters, budget).assignment


def evaluate_scheme(instance, qos, cfg: ExperimentConfig, scheme: str, assignment=None, budget=None, seed=0) -> dict:
    """Run one pilot/power scheme on one instance.

    Returns a dict with ``status`` (``ok``, ``infeasible``, ``degenerate`` or
    ``solver-failure``) and whatever quantities the scheme produces: ``tau``,
    ``admitted_prob``, ``wsr``, ``history`` and, for equal power,
    ``wsr_lb``/``wsr_mc``/``wsr_mc_stderr``.
    """
    pilot_name, power_name = _parse_scheme(scheme)
    budget = budget or PowerBudget(np.full(instance.K, cfg.pilot_max), np.full(instance.M, cfg.ap_max))
    if assignment is None:
        assignment = _assignment(pilot_name, instance, qos, cfg, budget)
    q = qos.with_tau(assignment.tau)
    out = {
        "status": "ok",
        "tau": float(assignment.tau),
        "admitted_prob": len(admitted_set(instance, assignment, q, budget)) / instance.K,
        "fingerprint": instance.fingerprint(),
    }
    if q.degenerate:
        out["status"] = "degenerate"
        return out
    if power_name == "equal":
        from .montecarlo import ergodic_rate_mc

        profile = equal_power_profile(instance, budget)
        lam = lambda_gain(q.tau, profile.pilot, instance.beta, assignment.groups)
        out["wsr_lb"] = out["wsr"] = float(q.weight @ lb_rate(sinr_lb(instance, lam, profile.downlink, assignment.groups), q))
        if "wsr_mc" in cfg.metrics or "wsr_mc_stderr" in cfg.metrics:
            est = ergodic_rate_mc(instance, profile, q, assignment.groups, cfg.mc_samples, seed)
            out["wsr_mc"] = float(q.weight @ est.mean)
            out["wsr_mc_stderr"] = float(math.sqrt(np.sum((q.weight * est.stderr) ** 2)))
        return out
    fixed = power_name == "fixed-pilot"
    try:
        feas = feasibility_init(instance, q, assignment.groups, budget, fixed_pilot=fixed, stop_when_feasible=True)
        res = maximize_wsr(instance, q, assignment.groups, budget, cfg.zeta, fixed_pilot=fixed, feasibility=feas)
    except (InfeasibleQos, InfeasibleRequirement):
        out["status"] = "infeasible"
        return out
    except SolverFailure as exc:
        log.warning("solver failure on %s: %s", scheme, exc)
        out["status"] = "solver-failure"
        return out
    out["wsr"] = res.wsr
    out["history"] = list(res.history)
    out["iterations"] = float(res.iterations)
    return out


def _metric_names(cfg: ExperimentConfig, scheme: str):
    names = []
    for metric in cfg.metrics:
        if metric == "wsr_history":
            names += [f"{scheme}:wsr_iter{i}" for i in range(cfg.history_len)]
        else:
            names.append(f"{scheme}:{metric}")
    return names


def _task(args):
    cfg, sweep_name, sweep_value, K, N, seed = args
    t0 = time.perf_counter()
    instance = generate_instance(seed, M=cfg.M, K=K, N=N, area_km=cfg.area_km, threshold=cfg.threshold, bandwidth=cfg.bandwidth)
    qos = _qos(cfg, K, seed)
    budget = PowerBudget(np.full(K, cfg.pilot_max), np.full(cfg.M, cfg.ap_max))
    assignments = {}
    rows = []
    for scheme in cfg.schemes:
        pilot_name, _ = _parse_scheme(scheme)
        if pilot_name not in assignments:
            assignments[pilot_name] = _assignment(pilot_name, instance, qos, cfg, budget)
        res = evaluate_scheme(instance, qos, cfg, scheme, assignments[pilot_name], budget, seed)
        status = res["status"]
        zeroed = cfg.zero_infeasible and status != "ok"
        for metric in cfg.metrics:
            if metric == "wsr_history":
                hist = res.get("history", [])
                for i in range(cfg.history_len):
                    value = hist[i] if i < len(hist) else math.nan
                    rows.append((f"{scheme}:wsr_iter{i}", value, status))
                continue
            value = res.get(metric, math.nan)
            if zeroed and metric == "wsr":
                value = 0.0
            rows.append((f"{scheme}:{metric}", float(value), status))
    out = [(cfg.experiment, seed, sweep_name, sweep_value, m, v, s) for m, v, s in rows]
    return out, time.perf_counter() - t0


def _tasks(cfg):
    return [(cfg, name, value, K, N, cfg.seed_offset + s) for name, value, K, N in _sweep_points(cfg) for s in range(cfg.seeds)]


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs, chunksize=1))
    return [fn(j) for j in jobs]


@dataclass
class ExperimentResult:
    rows: list
    manifest: dict
    csv_path: Path | None = None
    manifest_path: Path | None = None

    @property
    def statuses(self) -> dict:
        counts: dict = {}
        for row in self.rows:
            counts[row[6]] = counts.get(row[6], 0) + 1
        return counts

    @property
    def all_infeasible(self) -> bool:
        return bool(self.rows) and all(row[6] != "ok" for row in self.rows)


def _format(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format(v) for v in row])
    return path


def _versions() -> dict:
    import scipy

    return {"cfurllc": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every (sweep point, seed) task and write ``<experiment>.csv`` plus a manifest.

    Rows are merged in (sweep point, seed) order whatever the worker count,
    so a fixed config always yields the same CSV bytes.
    """
    t0 = time.perf_counter()
    jobs = _tasks(config)
    results = _map(_task, jobs, config.workers)
    rows = [row for chunk, _ in results for row in chunk]
    manifest = {
        "experiment": config.experiment,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "versions": _versions(),
        "n_tasks": len(jobs),
        "n_rows": len(rows),
        "task_seconds": [round(t, 4) for _, t in results],
        "wall_seconds": round(time.perf_counter() - t0, 3),
    }
    out = ExperimentResult(rows, manifest)
    if write:
        base = Path(config.output_dir)
        out.csv_path = write_csv(rows, base / f"{config.experiment}.csv")
        out.manifest_path = base / f"{config.experiment}.manifest.json"
        out.manifest_path.write_text(json.dumps(manifest, indent=2))
    return out


def _compare_task(args):
    cfg, K, N, seed, schemes = args
    instance = generate_instance(seed, M=cfg.M, K=K, N=N, area_km=cfg.area_km, threshold=cfg.threshold, bandwidth=cfg.bandwidth)
    qos = _qos(cfg, K, seed)
    budget = PowerBudget(np.full(K, cfg.pilot_max), np.full(cfg.M, cfg.ap_max))
    assignments = {}
    out = {}
    for scheme in schemes:
        pilot_name, _ = _parse_scheme(scheme)
        if pilot_name not in assignments:
            assignments[pilot_name] = _assignment(pilot_name, instance, qos, cfg, budget)
        out[scheme] = evaluate_scheme(instance, qos, cfg, scheme, assignments[pilot_name], budget, seed)
    return out


def compare_baselines(config: ExperimentConfig, schemes=None, pairs=None, write: bool = True) -> list:
    """Paired comparison of power and pilot schemes on identical seeds.

    For each K and each pair ``(a, b)`` reports the mean and standard error
    of ``wsr_a - wsr_b`` over seeds where both are feasible, the fraction of
    seeds with ``wsr_a >= wsr_b`` and the per-scheme feasibility counts.
    Raises if two schemes ever saw different instances for one seed.
    """
    schemes = list(schemes or BASELINES)
    pairs = list(pairs or [p for p in BASELINE_PAIRS if p[0] in schemes and p[1] in schemes])
    jobs = [(config, K, N, config.seed_offset + s, schemes) for N in config.N_list for K in config.K_list for s in range(config.seeds)]
    results = _map(_compare_task, jobs, config.workers)
    table = []
    for (cfg, K, N, seed, _), res in zip(jobs, results):
        prints = {r["fingerprint"] for r in res.values()}
        if len(prints) != 1:
            raise RuntimeError(f"schemes saw different instances for seed {seed}")
    for N in config.N_list:
        for K in config.K_list:
            picked = [res for (_, k, n, _, _), res in zip(jobs, results) if k == K and n == N]
            for a, b in pairs:
                diffs = np.array([r[a]["wsr"] - r[b]["wsr"] for r in picked if r[a]["status"] == "ok" and r[b]["status"] == "ok"])
                n = len(diffs)
                table.append(
                    {
                        "K": K,
                        "N": N,
                        "scheme_a": a,
                        "scheme_b": b,
                        "n_pairs": n,
                        "mean_diff": float(diffs.mean()) if n else math.nan,
                        "stderr_diff": float(diffs.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
                        "frac_a_ge_b": float(np.mean(diffs >= 0)) if n else math.nan,
                        "mean_a": float(np.mean([r[a]["wsr"] for r in picked if r[a]["status"] == "ok"] or [math.nan])),
                        "mean_b": float(np.mean([r[b]["wsr"] for r in picked if r[b]["status"] == "ok"] or [math.nan])),
                        "feasible_a": sum(r[a]["status"] == "ok" for r in picked),
                        "feasible_b": sum(r[b]["status"] == "ok" for r in picked),
                    }
                )
    if write and table:
        path = Path(config.output_dir) / f"{config.experiment}.compare.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(table[0]), lineterminator="\n")
            writer.writeheader()
            for row in table:
                writer.writerow({k: _format(v) for k, v in row.items()})
    return table
