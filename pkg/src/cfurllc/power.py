"""Weighted-sum-rate power control by successive geometric programming.

Each outer iteration replaces the rate of every device by a log-tangent
lower bound in its SINR surrogate ``chi_k``, and the numerator of the
product-form SINR by a monomial that touches it at the current powers.
What remains is a GP in the pilot powers, downlink powers, ``chi`` and one
auxiliary variable per (AP, pilot group) pilot load.  The auxiliaries
upper-bound the loads; because the SINR denominator grows with them they
are tight at the optimum.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import gp
from .fcbl import (
    InfeasibleRequirement,
    QosSpec,
    f_inverse,
    lambda_gain,
    lb_rate,
    pilot_load,
    sinr_lb,
)
from .model import NetworkInstance, PowerBudget, PowerProfile, equal_power_profile

log = logging.getLogger(__name__)

RHO_CAP = 1e6
# Lower bounds on optimisation powers, relative to their caps; keep the
# barrier away from log(0) without affecting realistic optima.
POWER_FLOOR = 1e-8
CHI_FLOOR = 1e-12
# Relative distance from the boundary for warm starts.
INTERIOR_MARGIN = 1e-7


class SolverFailure(RuntimeError):
    def __init__(self, message, iteration=None, last_profile=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_profile = last_profile


class InfeasibleQos(RuntimeError):
    def __init__(self, message, rho=None, profile=None):
        super().__init__(message)
        self.rho = rho
        self.profile = profile


def sinr_threshold(qos: QosSpec, k: int) -> float:
    """Smallest SINR at which device ``k``'s bound rate meets its requirement."""
    if qos.degenerate:
        raise InfeasibleRequirement(f"device {k}: pilot length {qos.tau} leaves no payload", device=k)
    alpha = qos.alpha()[k]
    target = qos.rate_req[k] * math.log(2.0) / (1.0 - qos.eta)
    x = f_inverse(target, alpha)
    return 0.0 if math.isinf(x) else 1.0 / x


def sinr_thresholds(qos: QosSpec) -> np.ndarray:
    return np.array([sinr_threshold(qos, k) for k in range(qos.K)])


class TangentCoeffs(NamedTuple):
    rho: np.ndarray
    delta: np.ndarray
    rho_hat: np.ndarray
    delta_hat: np.ndarray
    w_hat: np.ndarray
    w_tilde: np.ndarray


def tangent_coeffs(chi_point, alpha, w, eta) -> TangentCoeffs:
    """Log-domain tangents of ``ln(1+chi)`` (a lower bound) and of the
    square-root dispersion ``G(chi)`` (an upper bound) at ``chi_point``."""
    c = np.asarray(chi_point, dtype=float)
    if np.any(~(c > 0)):
        raise ValueError("tangent point must be positive")
    rho = c / (1.0 + c)
    delta = np.log1p(c) - rho * np.log(c)
    root = np.sqrt(c * c + 2.0 * c)
    rho_hat = c / root - c * root / (1.0 + c) ** 2
    delta_hat = np.sqrt(1.0 - 1.0 / (1.0 + c) ** 2) - rho_hat * np.log(c)
    w_tilde = np.asarray(w, dtype=float) * (1.0 - eta) / math.log(2.0)
    w_hat = w_tilde * (rho - np.asarray(alpha) * rho_hat)
    return TangentCoeffs(rho, delta, rho_hat, delta_hat, w_hat, w_tilde)


@dataclass(frozen=True)
class Condensation:
    """Monomial ``c * prod_m (p_mk beta_mk^2)^a_m * prod_i (tau p_i)^b_i``.

    ``a`` is keyed by serving AP, ``b`` by co-pilot device (including k).
    """

    log_c: float
    a: dict
    b: dict

    @property
    def c(self) -> float:
        return math.exp(self.log_c)


def _numerator_log(instance, x_d: dict, x_p: dict, k, group):
    """log(varphi_k * prod theta_kk') as a function of log-powers, with gradients.

    ``x_d[m] = ln(p_mk beta_mk^2)`` for m serving k, ``x_p[i] = ln(tau p_i)``
    for i in k's pilot group.
    """
    beta = instance.beta
    mates = [j for j in group if j != k]
    aps_needed = sorted(set().union(*(instance.serving_aps[j] for j in group)))
    e_p = {i: math.exp(x_p[i]) for i in group}
    load = {m: sum(e_p[i] * beta[m, i] for i in group) + 1.0 for m in aps_needed}
    own = instance.serving_aps[k]
    log_load_own = sum(math.log(load[n]) for n in own)
    log_terms = np.array([0.5 * (x_d[m] + x_p[k] + log_load_own - math.log(load[m])) for m in own])
    top = log_terms.max()
    log_varphi = top + math.log(np.exp(log_terms - top).sum())
    share = np.exp(log_terms - log_varphi)
    F = log_varphi + 0.5 * sum(math.log(load[m]) for j in mates for m in instance.serving_aps[j])
    a = {m: 0.5 * s for m, s in zip(own, share)}
    b = {}
    for i in group:
        gi = 0.5 if i == k else 0.0
        for s, m in zip(share, own):
            gi += 0.5 * s * sum(e_p[i] * beta[n, i] / load[n] for n in own if n != m)
        for j in mates:
            gi += 0.5 * sum(e_p[i] * beta[m, i] / load[m] for m in instance.serving_aps[j])
        b[i] = gi
    return F, a, b


def condensation_coeffs(instance, pilot_powers, downlink, groups, tau, k) -> Condensation:
    """Tangent monomial of device ``k``'s SINR numerator root at the given powers.

    In log-powers the root numerator is a convex function, so its tangent
    plane is a global under-estimator; exponentiating gives a monomial that
    lower-bounds it everywhere and matches it at the expansion point.
    """
    p = np.asarray(pilot_powers, dtype=float)
    D = np.asarray(downlink, dtype=float)
    group = _group_of(groups, k)
    own = instance.serving_aps[k]
    if np.any(p[list(group)] <= 0) or np.any(D[list(own), k] <= 0):
        raise ValueError(f"device {k}: condensation needs strictly positive expansion powers")
    x_d = {m: math.log(D[m, k] * instance.beta[m, k] ** 2) for m in own}
    x_p = {i: math.log(tau * p[i]) for i in group}
    F, a, b = _numerator_log(instance, x_d, x_p, k, group)
    log_c = F - sum(a[m] * x_d[m] for m in own) - sum(b[i] * x_p[i] for i in group)
    return Condensation(log_c, a, b)


def condensed_log_value(instance, cond: Condensation, pilot_powers, downlink, tau, k) -> float:
    """log of the condensed monomial at arbitrary positive powers."""
    val = cond.log_c
    for m, a in cond.a.items():
        val += a * math.log(downlink[m, k] * instance.beta[m, k] ** 2)
    for i, b in cond.b.items():
        val += b * math.log(tau * pilot_powers[i])
    return val


def numerator_log_value(instance, pilot_powers, downlink, groups, tau, k) -> float:
    """log(varphi_k * prod theta_kk') evaluated exactly."""
    group = _group_of(groups, k)
    own = instance.serving_aps[k]
    x_d = {m: math.log(downlink[m, k] * instance.beta[m, k] ** 2) for m in own}
    x_p = {i: math.log(tau * pilot_powers[i]) for i in group}
    return _numerator_log(instance, x_d, x_p, k, group)[0]


def _group_of(groups, k):
    for g in groups:
        if k in g:
            return tuple(g)
    raise ValueError(f"device {k} has no pilot group")


def sinr_at(instance, profile: PowerProfile, groups, tau) -> np.ndarray:
    lam = lambda_gain(tau, profile.pilot, instance.beta, groups)
    return sinr_lb(instance, lam, profile.downlink, groups)


def weighted_sum_rate(instance, profile, groups, qos: QosSpec):
    """Exact bound-rate WSR and per-device rates at ``profile``."""
    rates = lb_rate(sinr_at(instance, profile, groups, qos.tau), qos)
    return float(qos.weight @ rates), rates


@dataclass
class ScaState:
    """Coefficients of one successive-approximation subproblem."""

    chi: np.ndarray
    coeffs: TangentCoeffs
    condensation: list
    objective_history: list = field(default_factory=list)


def refresh_state(instance, qos, groups, profile: PowerProfile, history=None) -> ScaState:
    """Re-expand both approximations at ``profile``."""
    chi = sinr_at(instance, profile, groups, qos.tau)
    coeffs = tangent_coeffs(np.maximum(chi, 1e-300), qos.alpha(), qos.weight, qos.eta)
    conds = [condensation_coeffs(instance, profile.pilot, profile.downlink, groups, qos.tau, k) for k in range(instance.K)]
    return ScaState(chi, coeffs, conds, list(history or []))


def _pp(k):
    return f"pp{k}"


def _pd(m, k):
    return f"pd{m}_{k}"


def _u(m, g):
    return f"u{m}_{g}"


def _chi(k):
    return f"chi{k}"


def _assemble(instance, qos, groups, conds, budget, *, fixed_pilot=None):
    """Per-device condensed-SINR pieces shared by the WSR and feasibility GPs.

    Returns ``(sinr_cons, load_cons, power_cons, bounds)`` where
    ``sinr_cons[k]`` is ``De_k / numerator_monomial_k`` (to be multiplied by
    the SINR target) and the other lists are ready-made ``<= 1`` constraints.
    """
    tau = qos.tau
    beta = instance.beta
    N = instance.N
    serving = instance.serving_aps
    owner = {k: g for g, members in enumerate(groups) for k in members}

    def pilot(i):
        if fixed_pilot is not None:
            return gp.constant(float(fixed_pilot[i]))
        return gp.variable(_pp(i))

    interference_base = {}
    pd = {(m, k): gp.variable(_pd(m, k)) for k in range(instance.K) for m in serving[k]}

    sinr_cons = []
    for k in range(instance.K):
        g = owner[k]
        group = groups[g]
        mates = [j for j in group if j != k]
        U = {}

        def u(m):
            if m not in U:
                U[m] = gp.variable(_u(m, g))
            return U[m]

        theta_sq = {j: _prod(u(m) for m in serving[j]) for j in group}
        theta_all = _prod(theta_sq[j] for j in group)
        inter = gp.Posynomial([pd[mk] * float(beta[mk[0], k]) for mk in pd]) + 1.0
        de = theta_all * inter
        for j in mates:
            roots = []
            for m in serving[j]:
                rest = _prod(u(n) for n in serving[j] if n != m)
                roots.append((pilot(k) * pd[(m, j)] * rest * (tau * beta[m, k] ** 2)) ** 0.5)
            phi = gp.Posynomial(roots)
            others = _prod(theta_sq[i] ** 0.5 for i in mates if i != j)
            scaled = phi * others
            de = de + (scaled * scaled) * (theta_sq[k] * N)
        cond = conds[k]
        mono = gp.constant(N) * gp.Monomial(log_coeff=2 * cond.log_c)
        for m, a in cond.a.items():
            mono = mono * (pd[(m, k)] * beta[m, k] ** 2) ** (2 * a)
        for i, b in cond.b.items():
            mono = mono * (pilot(i) * tau) ** (2 * b)
        sinr_cons.append(de / mono)
        interference_base[k] = inter

    load_cons = []
    for g, group in enumerate(groups):
        aps = sorted(set().union(*(serving[j] for j in group)))
        for m in aps:
            load = gp.Posynomial([pilot(i) * float(tau * beta[m, i]) for i in group]) + 1.0
            load_cons.append(load / gp.variable(_u(m, g)))

    power_cons = []
    bounds = {}
    for m in range(instance.M):
        served = instance.served_devices[m]
        if served:
            power_cons.append(gp.Posynomial([pd[(m, k)] for k in served]) / float(budget.ap_max[m]))
            for k in served:
                bounds[_pd(m, k)] = (POWER_FLOOR * float(budget.ap_max[m]), None)
    if fixed_pilot is None:
        for k in range(instance.K):
            bounds[_pp(k)] = (POWER_FLOOR * float(budget.pilot_max[k]), float(budget.pilot_max[k]))
    return sinr_cons, load_cons, power_cons, bounds


def _prod(monomials):
    out = gp.constant(1.0)
    for mono in monomials:
        out = out * mono
    return out


def build_wsr_gp(instance, qos, groups, state: ScaState, budget, chi_min=None, *, fixed_pilot=None):
    """GP subproblem: maximise ``prod chi_k ** w_hat_k`` under condensed SINR,
    minimum-SINR and power constraints.

    Devices with a non-positive ``w_hat`` stay constrained but leave the objective.
    """
    return _wsr_program(instance, qos, groups, state, budget, chi_min, fixed_pilot)[0]


def _wsr_program(instance, qos, groups, state, budget, chi_min, fixed_pilot):
    if chi_min is None:
        chi_min = sinr_thresholds(qos)
    sinr_cons, load_cons, power_cons, bounds = _assemble(instance, qos, groups, state.condensation, budget, fixed_pilot=fixed_pilot)
    objective = gp.constant(1.0)
    for k, w in enumerate(state.coeffs.w_hat):
        if w > 0:
            objective = objective * gp.variable(_chi(k)) ** (-float(w))
    cons = [con * gp.variable(_chi(k)) for k, con in enumerate(sinr_cons)]
    for k, c in enumerate(chi_min):
        # the minimum SINR doubles as the lower bound that keeps chi bounded
        bounds[_chi(k)] = (float(c) if c > 0 else CHI_FLOOR, None)
    return gp.GpProgram(objective, cons + load_cons + power_cons, bounds), sinr_cons


def build_feasibility_gp(instance, qos, groups, conds, budget, chi_min, *, fixed_pilot=None):
    """GP maximising the common margin ``rho`` on every device's SINR threshold."""
    return _feasibility_program(instance, qos, groups, conds, budget, chi_min, fixed_pilot)[0]


def _feasibility_program(instance, qos, groups, conds, budget, chi_min, fixed_pilot):
    sinr_cons, load_cons, power_cons, bounds = _assemble(instance, qos, groups, conds, budget, fixed_pilot=fixed_pilot)
    rho = gp.variable("rho")
    active = [k for k, c in enumerate(chi_min) if c > 0]
    cons = [sinr_cons[k] * rho * float(chi_min[k]) for k in active]
    bounds["rho"] = (None, RHO_CAP)
    return gp.GpProgram(rho**-1, cons + load_cons + power_cons, bounds), [sinr_cons[k] * float(chi_min[k]) for k in active]


def _interior_margin(parts, x0) -> np.ndarray:
    """Largest value of a unit-exponent factor (chi_k or rho) that keeps each
    condensed SINR constraint at ``x0`` strictly below one."""
    logs = {name: math.log(v) for name, v in x0.items()}
    return np.array([math.exp(-p.log_eval(logs)) for p in parts]) * (1.0 - INTERIOR_MARGIN)


def _start_point(instance, profile: PowerProfile, groups, tau, budget):
    """Warm start strictly inside the cap and pilot-load constraints."""
    shrink = 1.0 - INTERIOR_MARGIN
    pilot = np.minimum(profile.pilot, budget.pilot_max * shrink)
    x0 = {}
    for k in range(instance.K):
        x0[_pp(k)] = float(pilot[k])
    ap_load = (profile.downlink * instance.service_mask).sum(axis=1)
    ap_scale = np.minimum(1.0, budget.ap_max * shrink / np.maximum(ap_load, 1e-300))
    for k in range(instance.K):
        for m in instance.serving_aps[k]:
            x0[_pd(m, k)] = float(max(profile.downlink[m, k] * ap_scale[m], POWER_FLOOR * budget.ap_max[m] / shrink))
    load, _ = pilot_load(tau, pilot, instance.beta, groups)
    for g in range(len(groups)):
        for m in range(instance.M):
            x0[_u(m, g)] = float(load[m, g] / shrink)
    return x0


def _profile_from(instance, values, fixed_pilot=None) -> PowerProfile:
    if fixed_pilot is not None:
        pilot = np.asarray(fixed_pilot, dtype=float)
    else:
        pilot = np.array([values[_pp(k)] for k in range(instance.K)])
    D = np.zeros((instance.M, instance.K))
    for k in range(instance.K):
        for m in instance.serving_aps[k]:
            D[m, k] = values[_pd(m, k)]
    return PowerProfile(pilot, D)


@dataclass
class FeasibilityResult:
    profile: PowerProfile
    rho: float
    rounds: int
    history: list

    @property
    def feasible(self) -> bool:
        return self.rho >= 1.0


def feasibility_init(
    instance,
    qos,
    groups,
    budget: PowerBudget,
    *,
    fixed_pilot: bool = False,
    max_rounds: int = 20,
    rtol: float = 1e-4,
    stop_when_feasible: bool = False,
    start: PowerProfile | None = None,
    tol: float = 1e-8,
) -> FeasibilityResult:
    """Largest common multiple ``rho`` of the SINR thresholds that the powers can support.

    The condensation is re-expanded at each solution until ``rho`` moves by
    less than ``rtol`` (relative) or ``max_rounds`` GPs have been solved.
    ``rho >= 1`` means every device can meet its requirement.
    """
    chi_min = sinr_thresholds(qos)
    profile = start or equal_power_profile(instance, budget)
    pilot_fixed = budget.pilot_max if fixed_pilot else None
    if pilot_fixed is not None:
        profile = PowerProfile(pilot_fixed, profile.downlink)
    if not np.any(chi_min > 0):
        return FeasibilityResult(profile, RHO_CAP, 0, [RHO_CAP])
    history = []
    rho_prev = None
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        conds = [condensation_coeffs(instance, profile.pilot, profile.downlink, groups, qos.tau, k) for k in range(instance.K)]
        program, parts = _feasibility_program(instance, qos, groups, conds, budget, chi_min, pilot_fixed)
        x0 = _start_point(instance, profile, groups, qos.tau, budget)
        x0["rho"] = float(min(_interior_margin(parts, x0).min(), RHO_CAP * (1.0 - INTERIOR_MARGIN)))
        res = gp.solve(program, tol=tol, x0=x0)
        if res.status != "optimal":
            raise SolverFailure(f"feasibility GP ended with status {res.status}", iteration=rounds, last_profile=profile)
        profile = _profile_from(instance, res.values, pilot_fixed)
        rho = res.values["rho"]
        history.append(rho)
        if stop_when_feasible and rho >= 1.0:
            break
        if rho_prev is not None and abs(rho - rho_prev) <= rtol * rho_prev:
            break
        rho_prev = rho
    return FeasibilityResult(profile, history[-1], rounds, history)


@dataclass
class WsrResult:
    profile: PowerProfile
    chi: np.ndarray
    wsr: float
    history: list
    rates: np.ndarray
    rho: float

    @property
    def iterations(self) -> int:
        """Number of GP subproblems solved after initialisation."""
        return len(self.history) - 1

    def to_dict(self) -> dict:
        return {
            "powers": self.profile.to_dict(),
            "chi": self.chi.tolist(),
            "wsr": self.wsr,
            "history": list(self.history),
            "rates": self.rates.tolist(),
            "rho": self.rho,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def csv_row(self, **extra) -> str:
        buf = io.StringIO()
        row = {**extra, "wsr": repr(self.wsr), "iterations": self.iterations, "rho": repr(self.rho)}
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writerow(row)
        return buf.getvalue()


def maximize_wsr(
    instance,
    qos,
    groups,
    budget: PowerBudget,
    zeta: float = 0.01,
    *,
    fixed_pilot: bool = False,
    max_iters: int = 50,
    feasibility: FeasibilityResult | None = None,
    tol: float = 1e-9,
) -> WsrResult:
    """Successive-GP maximisation of the weighted sum of bound rates.

    Starts from the feasibility solution and stops once the relative WSR
    gain of an iteration drops below ``zeta``.  With ``fixed_pilot`` the
    pilot powers stay at their caps and only downlink powers move.
    """
    if feasibility is None:
        feasibility = feasibility_init(instance, qos, groups, budget, fixed_pilot=fixed_pilot)
    if not feasibility.feasible:
        raise InfeasibleQos(f"QoS infeasible (rho = {feasibility.rho:.4g})", feasibility.rho, feasibility.profile)
    chi_min = sinr_thresholds(qos)
    pilot_fixed = budget.pilot_max if fixed_pilot else None
    profile = feasibility.profile
    wsr, rates = weighted_sum_rate(instance, profile, groups, qos)
    history = [wsr]
    prev = wsr * zeta
    n = 1
    while prev > 0 and (wsr - prev) / prev >= zeta and n < max_iters:
        state = refresh_state(instance, qos, groups, profile, history)
        program, parts = _wsr_program(instance, qos, groups, state, budget, chi_min, pilot_fixed)
        x0 = _start_point(instance, profile, groups, qos.tau, budget)
        # phase one takes over if a device sits exactly on its threshold
        chi_start = np.maximum(_interior_margin(parts, x0), chi_min * (1.0 + INTERIOR_MARGIN))
        x0.update({_chi(k): float(c) for k, c in enumerate(chi_start)})
        res = gp.solve(program, tol=tol, x0=x0)
        if res.status != "optimal":
            raise SolverFailure(f"WSR subproblem {n} ended with status {res.status}", iteration=n, last_profile=profile)
        profile = _profile_from(instance, res.values, pilot_fixed)
        prev = wsr
        wsr, rates = weighted_sum_rate(instance, profile, groups, qos)
        history.append(wsr)
        log.debug("iteration %d: wsr %.6g", n, wsr)
        n += 1
    chi = sinr_at(instance, profile, groups, qos.tau)
    return WsrResult(profile, chi, wsr, history, rates, feasibility.rho)
