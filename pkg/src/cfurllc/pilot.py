"""Pilot assignment by capped graph coloring.

Two devices conflict when their serving sets share an AP; a proper coloring
of the conflict graph with at most ``n_max`` devices per color is a pilot
assignment in which co-pilot devices never meet at a common AP.  The
iterative refinement then forbids the worst contamination pairs among
devices that still miss their rate requirement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fcbl import QosSpec, lambda_gain, lb_rate, sinr_lb
from .model import NetworkInstance, PowerBudget, equal_power_profile


def build_conflict_matrix(instance: NetworkInstance) -> np.ndarray:
    """Symmetric boolean [K, K] matrix, True where two devices share a serving AP."""
    mask = instance.service_mask.astype(np.int64)
    conflict = (mask.T @ mask) > 0
    np.fill_diagonal(conflict, False)
    return conflict


def _check_conflict(conflict) -> np.ndarray:
    B = np.asarray(conflict, dtype=bool)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("conflict matrix must be square")
    if np.any(B != B.T):
        raise ValueError("conflict matrix must be symmetric")
    if np.any(np.diag(B)):
        raise ValueError("conflict matrix must have a zero diagonal")
    return B


@dataclass(frozen=True, eq=False)
class PilotAssignment:
    """Disjoint pilot groups covering every device; ``tau`` is the number of pilots."""

    groups: tuple
    n_max: int
    conflict: np.ndarray | None = None

    def __post_init__(self):
        groups = tuple(tuple(sorted(int(k) for k in g)) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if self.conflict is not None:
            B = _check_conflict(self.conflict).copy()
            B.setflags(write=False)
            object.__setattr__(self, "conflict", B)

    @property
    def tau(self) -> int:
        return len(self.groups)

    @property
    def K(self) -> int:
        return sum(len(g) for g in self.groups)

    def owner(self) -> np.ndarray:
        own = np.full(self.K, -1, dtype=int)
        for g, members in enumerate(self.groups):
            own[list(members)] = g
        return own

    def violations(self, conflict=None) -> list:
        """Human-readable reasons the assignment is invalid (empty if valid)."""
        B = self.conflict if conflict is None else _check_conflict(conflict)
        problems = []
        seen = [k for g in self.groups for k in g]
        if sorted(seen) != list(range(len(seen))):
            problems.append("groups do not partition the devices")
        for i, g in enumerate(self.groups):
            if len(g) == 0:
                problems.append(f"group {i} is empty")
            if len(g) > self.n_max:
                problems.append(f"group {i} has {len(g)} > n_max={self.n_max} devices")
            if B is not None:
                sub = B[np.ix_(g, g)]
                if sub.any():
                    a, b = np.argwhere(sub)[0]
                    problems.append(f"group {i} holds conflicting devices {g[a]} and {g[b]}")
        return problems

    def is_valid(self, conflict=None) -> bool:
        return not self.violations(conflict)

    def to_dict(self) -> dict:
        doc = {"tau": self.tau, "n_max": self.n_max, "groups": [list(g) for g in self.groups]}
        if self.conflict is not None:
            doc["conflict"] = self.conflict.astype(int).tolist()
        return doc

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "PilotAssignment":
        conflict = doc.get("conflict")
        out = cls(tuple(tuple(g) for g in doc["groups"]), int(doc["n_max"]), None if conflict is None else np.asarray(conflict, bool))
        if "tau" in doc and int(doc["tau"]) != out.tau:
            raise ValueError("tau does not match the number of groups")
        return out


def dsatur_color(conflict, n_max: int) -> PilotAssignment:
    """Dsatur coloring with at most ``n_max`` vertices per color.

    The next vertex has the largest saturation (distinct neighbour colors),
    then the largest degree among uncolored vertices, then the lowest index.
    It takes the lowest color that is proper and below the cap, or a new one.
    """
    B = _check_conflict(conflict)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    K = B.shape[0]
    color = np.full(K, -1, dtype=int)
    sizes: list[int] = []
    seen = np.zeros((K, K), dtype=bool)  # seen[v, c]: a neighbour of v has color c
    for _ in range(K):
        uncolored = color < 0
        cand = np.flatnonzero(uncolored)
        sat = seen[cand].sum(axis=1)
        deg = B[np.ix_(cand, cand)].sum(axis=1)
        v = cand[np.lexsort((cand, -deg, -sat))[0]]
        c = next((c for c in range(len(sizes)) if not seen[v, c] and sizes[c] < n_max), len(sizes))
        if c == len(sizes):
            sizes.append(0)
        color[v] = c
        sizes[c] += 1
        seen[B[v], c] = True
    groups = tuple(tuple(np.flatnonzero(color == c)) for c in range(len(sizes)))
    return PilotAssignment(groups, int(n_max), B)


def orthogonal_assignment(K: int, conflict=None) -> PilotAssignment:
    """One pilot per device."""
    return PilotAssignment(tuple((k,) for k in range(K)), 1, conflict)


def fixed_power_rates(instance, groups, qos: QosSpec, budget: PowerBudget | None = None) -> np.ndarray:
    """Bound rates at full pilot power and equally split downlink power, with ``tau = len(groups)``."""
    budget = budget or PowerBudget.uniform(instance)
    q = qos.with_tau(len(groups))
    if q.degenerate:
        return np.zeros(instance.K)
    profile = equal_power_profile(instance, budget)
    lam = lambda_gain(q.tau, profile.pilot, instance.beta, groups)
    return lb_rate(sinr_lb(instance, lam, profile.downlink, groups), q)


def admitted_set(instance, assignment: PilotAssignment, qos: QosSpec, budget: PowerBudget | None = None) -> np.ndarray:
    """Devices whose fixed-power bound rate meets their requirement."""
    rates = fixed_power_rates(instance, assignment.groups, qos, budget)
    if qos.with_tau(assignment.tau).degenerate:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(rates >= qos.rate_req)


class IterativeResult(NamedTuple):
    """``conflict`` is the matrix the returned assignment was colored under;
    ``final_conflict`` holds every edge added, including later rounds."""

    assignment: PilotAssignment
    history: list
    baseline: PilotAssignment
    conflict: np.ndarray
    iterations: int
    final_conflict: np.ndarray


def assign_pilots_iterative(
    instance,
    qos: QosSpec,
    n_max: int = 4,
    iota: int = 4,
    max_iters: int = 20,
    budget: PowerBudget | None = None,
) -> IterativeResult:
    """Refine a Dsatur assignment to admit more devices.

    Each round, every pilot group holding a device below its requirement
    gets one new conflict edge between its worst device and the co-pilot
    device that contaminates it most; the graph is then recolored from
    scratch.  Runs until the pilot count exceeds the Dsatur count by
    ``iota`` or ``max_iters`` rounds pass, and returns the best assignment
    seen.  ``history`` holds the best admitted count after each round.
    """
    if iota < 0:
        raise ValueError("iota must be non-negative")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    budget = budget or PowerBudget.uniform(instance)
    B = build_conflict_matrix(instance)
    baseline = dsatur_color(B, n_max)
    best = baseline
    best_count = len(admitted_set(instance, baseline, qos, budget))
    history = [best_count]
    if best_count == instance.K:
        return IterativeResult(baseline, history, baseline, baseline.conflict, 0, B)
    profile = equal_power_profile(instance, budget)
    current = baseline
    r = 0
    while current.tau - baseline.tau < iota and r < max_iters:
        r += 1
        groups = current.groups
        rates = fixed_power_rates(instance, groups, qos, budget)
        deficit = rates - qos.rate_req
        lam = lambda_gain(current.tau, budget.pilot_max, instance.beta, groups)
        root_p = np.sqrt(profile.downlink)
        added = False
        for group in groups:
            violators = [k for k in group if deficit[k] < 0]
            if not violators or len(group) == 1:
                continue
            d = min(violators, key=lambda k: (deficit[k], k))
            others = [j for j in group if j != d]
            scores = [float(root_p[list(instance.serving_aps[j]), j] @ np.sqrt(lam[list(instance.serving_aps[j]), d])) for j in others]
            c = others[int(np.argmax(scores))]
            B[d, c] = B[c, d] = True
            added = True
        if not added:
            break
        current = dsatur_color(B, n_max)
        count = len(admitted_set(instance, current, qos, budget))
        if count > best_count:
            best, best_count = current, count
        history.append(best_count)
    return IterativeResult(best, history, baseline, best.conflict, r, B.copy())
