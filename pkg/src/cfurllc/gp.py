"""Geometric programs in log-variable form and a barrier solver for them.

A GP minimises a posynomial subject to posynomial <= 1 constraints over
positive variables.  With ``y = log x`` every posynomial becomes a
log-sum-exp of affine functions, which is convex, so the problem is solved
by a standard log-barrier method with damped Newton steps.

Monomials keep their coefficient as a natural log so that products of many
large terms stay representable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from numbers import Real

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import nnls

SCHEMA_VERSION = 1


class Monomial:
    """``exp(log_coeff) * prod x_j ** a_j``."""

    __slots__ = ("log_coeff", "exponents")

    def __init__(self, exponents=None, coeff=None, log_coeff=None):
        if coeff is not None and log_coeff is not None:
            raise TypeError("give coeff or log_coeff, not both")
        if coeff is not None:
            if not coeff > 0:
                raise ValueError("monomial coefficient must be positive")
            log_coeff = math.log(coeff)
        self.log_coeff = 0.0 if log_coeff is None else float(log_coeff)
        if not math.isfinite(self.log_coeff):
            raise ValueError("monomial coefficient must be positive and finite")
        self.exponents = {k: float(v) for k, v in (exponents or {}).items() if v != 0}

    @property
    def coeff(self) -> float:
        return math.exp(self.log_coeff)

    def __mul__(self, other):
        if isinstance(other, Monomial):
            exps = dict(self.exponents)
            for k, v in other.exponents.items():
                exps[k] = exps.get(k, 0.0) + v
            return Monomial(exps, log_coeff=self.log_coeff + other.log_coeff)
        if isinstance(other, Posynomial):
            return Posynomial([self * t for t in other.terms])
        if isinstance(other, Real):
            return Monomial(self.exponents, log_coeff=self.log_coeff + math.log(other))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Monomial):
            return self * other ** -1
        if isinstance(other, Real):
            return Monomial(self.exponents, log_coeff=self.log_coeff - math.log(other))
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, Real):
            return Monomial(coeff=other) * self ** -1
        return NotImplemented

    def __pow__(self, power):
        return Monomial({k: v * power for k, v in self.exponents.items()}, log_coeff=self.log_coeff * power)

    def __add__(self, other):
        return Posynomial([self]) + other

    __radd__ = __add__

    def log_eval(self, log_values: dict) -> float:
        return self.log_coeff + sum(a * log_values[k] for k, a in self.exponents.items())

    def __repr__(self):
        body = " * ".join(f"{k}^{v:g}" for k, v in sorted(self.exponents.items()))
        return f"Monomial({self.coeff:.6g}{' * ' + body if body else ''})"


def variable(name: str) -> Monomial:
    return Monomial({name: 1.0})


def constant(value: float) -> Monomial:
    return Monomial(coeff=value)


class Posynomial:
    """A non-empty sum of monomials."""

    __slots__ = ("terms",)

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("posynomial needs at least one term")
        self.terms = terms

    def __add__(self, other):
        if isinstance(other, Posynomial):
            return Posynomial(self.terms + other.terms)
        if isinstance(other, Monomial):
            return Posynomial(self.terms + [other])
        if isinstance(other, Real):
            return Posynomial(self.terms + [constant(other)])
        return NotImplemented

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (Monomial, Real)):
            return Posynomial([t * other for t in self.terms])
        if isinstance(other, Posynomial):
            return Posynomial([a * b for a in self.terms for b in other.terms])
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (Monomial, Real)):
            return Posynomial([t / other for t in self.terms])
        return NotImplemented

    def __len__(self):
        return len(self.terms)

    def variables(self) -> set:
        return {k for t in self.terms for k in t.exponents}

    def log_eval(self, log_values: dict) -> float:
        z = np.array([t.log_eval(log_values) for t in self.terms])
        zmax = z.max()
        return float(zmax + np.log(np.exp(z - zmax).sum()))

    def __call__(self, **values) -> float:
        return math.exp(self.log_eval({k: math.log(v) for k, v in values.items()}))


def _as_posynomial(p) -> Posynomial:
    if isinstance(p, Posynomial):
        return p
    if isinstance(p, Monomial):
        return Posynomial([p])
    if isinstance(p, Real):
        return Posynomial([constant(p)])
    raise TypeError(f"cannot use {type(p).__name__} as a posynomial")


@dataclass
class GpProgram:
    """Minimise ``objective`` subject to ``c <= 1`` for every ``c`` in ``constraints``.

    ``bounds`` maps a variable to ``(lower, upper)``; either side may be None.
    ``variables`` fixes the declared variable order; by default it is every
    variable referenced, sorted by name.
    """

    objective: Posynomial
    constraints: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)
    variables: list | None = None

    def __post_init__(self):
        self.objective = _as_posynomial(self.objective)
        self.constraints = [_as_posynomial(c) for c in self.constraints]
        used = set(self.objective.variables()).union(*(c.variables() for c in self.constraints))
        used |= set(self.bounds)
        if self.variables is None:
            self.variables = sorted(used)
        else:
            missing = used - set(self.variables)
            if missing:
                raise ValueError(f"undeclared variables: {sorted(missing)}")
            self.variables = list(self.variables)
        if not self.variables:
            raise ValueError("a GP needs at least one variable")
        for name, (lo, hi) in self.bounds.items():
            if (lo is not None and not lo > 0) or (hi is not None and not hi > 0):
                raise ValueError(f"bounds of {name} must be positive")

    def all_constraints(self) -> list:
        """Constraints with variable bounds appended as monomial constraints."""
        out = list(self.constraints)
        for name in self.variables:
            lo, hi = self.bounds.get(name, (None, None))
            if lo is not None:
                out.append(Posynomial([Monomial({name: -1.0}, coeff=lo)]))
            if hi is not None:
                out.append(Posynomial([Monomial({name: 1.0}, coeff=1.0 / hi)]))
        return out

    def to_dict(self) -> dict:
        def enc(p):
            return [[t.log_coeff, t.exponents] for t in p.terms]

        return {
            "schema_version": SCHEMA_VERSION,
            "variables": self.variables,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "objective": enc(self.objective),
            "constraints": [enc(c) for c in self.constraints],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "GpProgram":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported GP schema version")

        def dec(rows):
            return Posynomial([Monomial(e, log_coeff=lc) for lc, e in rows])

        return cls(
            objective=dec(doc["objective"]),
            constraints=[dec(c) for c in doc["constraints"]],
            bounds={k: tuple(v) for k, v in doc.get("bounds", {}).items()},
            variables=doc["variables"],
        )

    @classmethod
    def from_json(cls, text: str) -> "GpProgram":
        return cls.from_dict(json.loads(text))


DENSE_LIMIT = 4_000_000


class _LogSumExpSet:
    """Stacked log-sum-exp functions ``f_j(y) = log sum_t exp(A_t y + b_t)``.

    Terms are stored in one sparse matrix, grouped by function.
    """

    def __init__(self, A, b, seg, n_funcs):
        order = np.argsort(seg, kind="stable")
        A = sp.csr_matrix(A)[order]
        self.A_sparse = A
        # dense products are far cheaper than sparse ones at these sizes
        self.A = A.toarray() if A.shape[0] * A.shape[1] <= DENSE_LIMIT else A
        self.b = np.asarray(b, dtype=float)[order]
        self.seg = np.asarray(seg)[order]
        self.n_funcs = n_funcs
        counts = np.bincount(self.seg, minlength=n_funcs)
        if np.any(counts == 0):
            raise ValueError("every function needs at least one term")
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.S = sp.csr_matrix((np.ones(len(self.seg)), (self.seg, np.arange(len(self.seg)))), shape=(n_funcs, len(self.seg)))

    def values(self, y):
        z = self.A @ y + self.b
        zmax = np.maximum.reduceat(z, self.starts)
        with np.errstate(over="ignore"):
            tot = np.add.reduceat(np.exp(z - zmax[self.seg]), self.starts)
        return zmax + np.log(tot), z

    def derivatives(self, y):
        f, z = self.values(y)
        w = np.exp(z - f[self.seg])
        if isinstance(self.A, np.ndarray):
            G = np.add.reduceat(w[:, None] * self.A, self.starts, axis=0)
        else:
            G = (self.S @ sp.diags(w) @ self.A).toarray()
        return f, w, G


def _compile(program: GpProgram, constraints):
    index = {name: j for j, name in enumerate(program.variables)}
    rows, cols, vals, b, seg = [], [], [], [], []
    t = 0
    for fid, posy in enumerate([program.objective, *constraints]):
        for term in posy.terms:
            for name, a in term.exponents.items():
                rows.append(t)
                cols.append(index[name])
                vals.append(a)
            b.append(term.log_coeff)
            seg.append(fid)
            t += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(t, len(index)))
    return _LogSumExpSet(A, b, seg, 1 + len(constraints))


@dataclass
class GpResult:
    values: dict
    log_values: np.ndarray
    objective: float
    status: str
    duals: np.ndarray
    newton_steps: int
    gap: float

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


PHASE_ONE_BOX = 60.0


class _Unbounded(Exception):
    pass


def _newton_solve(H, g):
    n = H.shape[0]
    ridge = 0.0
    scale = max(1e-300, float(np.max(np.abs(np.diag(H)))) if n else 1.0)
    for _ in range(12):
        try:
            c = scipy.linalg.cho_factor(H + ridge * np.eye(n), check_finite=False)
            return -scipy.linalg.cho_solve(c, g, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            ridge = max(ridge * 100.0, 1e-12 * scale)
    return -np.linalg.lstsq(H, g, rcond=None)[0]


def _barrier(fs: _LogSumExpSet, y, tol, max_steps, mu0=1.0, stop=None):
    """Log-barrier method for min f_0 s.t. f_i <= 0 from a strictly feasible y.

    ``mu`` starts at ``mu0`` and shrinks tenfold after each centring until
    ``m * mu <= tol``.  ``stop(y, f)`` may end the run early (phase one).
    Returns (y, status, newton steps, mu, f).
    """
    m = fs.n_funcs - 1
    mu = mu0
    steps = 0

    def phi(y_, t):
        f_, _ = fs.values(y_)
        if m and not np.all(f_[1:] < 0):
            return np.inf, f_
        val = t * f_[0] - np.log(-f_[1:]).sum()
        return (val if np.isfinite(val) else np.inf), f_

    while True:
        t = 1.0 / mu
        for _ in range(100):
            f, w, G = fs.derivatives(y)
            if stop is not None and stop(y, f):
                return y, "stopped", steps, mu, f
            if f[0] < -1e5 or np.max(np.abs(y)) > 1e4:
                raise _Unbounded
            s = np.empty(fs.n_funcs)
            s[0] = t
            s[1:] = 1.0 / (-f[1:])
            grad = s @ G
            ws = w * s[fs.seg]
            if isinstance(fs.A, np.ndarray):
                H = fs.A.T @ (ws[:, None] * fs.A)
            else:
                H = (fs.A.T @ (sp.diags(ws) @ fs.A)).toarray()
            H -= G.T @ (s[:, None] * G)
            if m:
                Gc = G[1:] * s[1:, None]
                H += Gc.T @ Gc
            dy = _newton_solve(H, grad)
            dec = -grad @ dy
            if dec / 2.0 <= 1e-8:
                break
            step = 1.0
            phi0, _ = phi(y, t)
            # Near the centre t * f_0 is large and its rounding noise swamps
            # the predicted decrease; a strictly feasible full step is taken.
            if dec < 1e-4 and np.isfinite(phi(y + dy, t)[0]):
                y = y + dy
                steps += 1
                if steps >= max_steps:
                    return y, "max-iter", steps, mu, fs.values(y)[0]
                continue
            while True:
                val, _ = phi(y + step * dy, t)
                if val <= phi0 + 0.25 * step * (grad @ dy):
                    break
                step *= 0.5
                if step < 1e-14:
                    break
            if step < 1e-14:
                break
            y = y + step * dy
            steps += 1
            if steps >= max_steps:
                return y, "max-iter", steps, mu, fs.values(y)[0]
        if m == 0 or m * mu <= tol:
            return y, "optimal", steps, mu, fs.values(y)[0]
        mu /= 10.0


def _phase_one(fs: _LogSumExpSet, y0, tol, max_steps):
    """Find y with every f_i(y) < 0 by minimising a shared slack s.

    Returns (y, steps) or (None, steps) when the constraints are infeasible.
    """
    A = fs.A_sparse
    n = A.shape[1]
    cons = fs.seg > 0
    T_c = int(cons.sum())
    # columns: y..., s ; objective is s, constraints f_i - s <= 0, plus s >= -1
    A_c = sp.hstack([A[cons], sp.csr_matrix(-np.ones((T_c, 1)))])
    A_obj = sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n + 1))
    A_low = sp.csr_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    # a log-space box around y0 keeps the search bounded when the feasible
    # set is not
    eye = sp.hstack([sp.identity(n, format="csr"), sp.csr_matrix((n, 1))])
    A_box = sp.vstack([eye, -eye])
    b_box = np.concatenate([-y0 - PHASE_ONE_BOX, y0 - PHASE_ONE_BOX])
    A1 = sp.vstack([A_obj, A_c, A_low, A_box]).tocsr()
    b1 = np.concatenate([[0.0], fs.b[cons], [-1.0], b_box])
    seg1 = np.concatenate([[0], fs.seg[cons], [fs.n_funcs], fs.n_funcs + 1 + np.arange(2 * n)])
    aux = _LogSumExpSet(A1, b1, seg1, fs.n_funcs + 1 + 2 * n)
    f0, _ = fs.values(y0)
    s0 = max(float(np.max(f0[1:])) + 1.0, 0.0)
    z0 = np.concatenate([y0, [s0]])

    def feasible_enough(z, f):
        return float(np.max(fs.values(z[:n])[0][1:])) < -1e-3

    z, status, steps, _, f = _barrier(aux, z0, tol, max_steps, stop=feasible_enough)
    y = z[:n]
    if np.max(fs.values(y)[0][1:]) < 0:
        return y, steps
    return None, steps


def solve(program: GpProgram, tol: float = 1e-8, max_iter: int = 500, x0: dict | None = None) -> GpResult:
    """Solve a GP by the log-barrier method.

    ``x0`` optionally supplies a starting point; a phase-one search moves it
    inside the feasible set when needed.  ``max_iter`` caps the total number
    of Newton steps.  Status is one of ``optimal``, ``infeasible``,
    ``unbounded`` or ``max-iter``.
    """
    cons = program.all_constraints()
    fs = _compile(program, cons)
    n = len(program.variables)
    y = np.zeros(n)
    if x0:
        for j, name in enumerate(program.variables):
            if name in x0:
                y[j] = math.log(x0[name])
    m = len(cons)
    steps = 0
    if m:
        f, _ = fs.values(y)
        if not np.all(f[1:] < 0):
            y1, steps = _phase_one(fs, y, tol, max_iter)
            if y1 is None:
                return _result(program, fs, y, "infeasible", np.zeros(m), steps, math.inf)
            y = y1
    try:
        y, status, more, mu, f = _barrier(fs, y, tol, max_iter - steps)
    except _Unbounded:
        return _result(program, fs, y, "unbounded", np.zeros(m), steps, math.inf)
    steps += more
    # least-squares multipliers are sharper than mu / (-f) off the exact central path
    duals = _kkt_duals(fs, y)[1] if m else np.zeros(0)
    return _result(program, fs, y, status, duals, steps, m * mu)


def _result(program, fs, y, status, duals, steps, gap):
    f, _ = fs.values(y)
    values = {name: math.exp(v) for name, v in zip(program.variables, y)}
    return GpResult(values, y, math.exp(f[0]), status, duals, steps, gap)


@dataclass
class KktReport:
    """Optimality diagnostics in log-variable coordinates.

    ``slack[i] = -log(c_i(x))`` (positive when strictly satisfied); duals are
    the non-negative least-squares multipliers that best satisfy
    stationarity and complementarity jointly.
    """

    slack: np.ndarray
    duals: np.ndarray
    stationarity: float
    complementarity: float
    infeasibility: float
    tol: float

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.complementarity, self.infeasibility)

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


def _kkt_duals(fs: _LogSumExpSet, y):
    """Non-negative multipliers that best satisfy stationarity and complementarity."""
    f, _, G = fs.derivatives(y)
    m = fs.n_funcs - 1
    if not m:
        return f, np.zeros(0), G
    fc = f[1:]
    lhs = np.vstack([G[1:].T, np.diag(-np.minimum(fc, 0.0))])
    rhs = np.concatenate([-G[0], np.zeros(m)])
    duals, _ = nnls(lhs, rhs, maxiter=50 * max(m, 10))
    return f, duals, G


def check_kkt(program: GpProgram, point: dict, tol: float = 1e-6) -> KktReport:
    """KKT residuals of ``program`` at a strictly positive ``point``."""
    cons = program.all_constraints()
    fs = _compile(program, cons)
    y = np.array([math.log(point[name]) for name in program.variables])
    f, duals, G = _kkt_duals(fs, y)
    g0, Gc, fc = G[0], G[1:], f[1:]
    m = len(cons)
    stat = float(np.max(np.abs(g0 + Gc.T @ duals))) if m else float(np.max(np.abs(g0)))
    comp = float(np.max(np.abs(duals * fc))) if m else 0.0
    infeas = float(max(0.0, np.max(fc))) if m else 0.0
    return KktReport(-fc, duals, stat, comp, infeas, tol)
