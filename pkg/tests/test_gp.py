import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfurllc import gp
from cfurllc.gp import GpProgram, Monomial, Posynomial, check_kkt, solve, variable

from helpers import grid_oracle, random_gp

x, y, z = variable("x"), variable("y"), variable("z")


# --- algebra ---------------------------------------------------------------


def test_monomial_rejects_nonpositive_coeff():
    with pytest.raises(ValueError):
        Monomial({"x": 1}, coeff=0.0)
    with pytest.raises(ValueError):
        Monomial({"x": 1}, coeff=-2.0)


def test_monomial_algebra():
    m = (2 * x**2 * y) / (4 * y**3)
    assert m.exponents == {"x": 2.0, "y": -2.0}
    assert math.isclose(m.coeff, 0.5)
    assert math.isclose((1 / x).exponents["x"], -1.0)


def test_posynomial_evaluation():
    p = x + 2 * y * z + 3
    assert len(p) == 3
    assert math.isclose(p(x=1.5, y=2.0, z=0.25), 1.5 + 1.0 + 3.0)
    q = p * (x + 1)
    assert len(q) == 6
    assert math.isclose(q(x=2.0, y=1.0, z=1.0), (2 + 2 + 3) * 3)


def test_empty_posynomial_rejected():
    with pytest.raises(ValueError):
        Posynomial([])


def test_program_validation():
    with pytest.raises(ValueError):
        GpProgram(x, [y / x], variables=["x"])
    with pytest.raises(ValueError):
        GpProgram(x, bounds={"x": (0.0, 1.0)})
    with pytest.raises(ValueError):
        GpProgram(Posynomial([Monomial()]))


def test_json_round_trip(rng):
    prog = random_gp(rng)
    back = GpProgram.from_json(prog.to_json())
    assert back.variables == prog.variables
    assert back.bounds == prog.bounds
    pt = {"x": 0.7, "y": 1.3, "z": 2.1}
    assert math.isclose(back.objective(**pt), prog.objective(**pt), rel_tol=1e-14)
    for a, b in zip(back.constraints, prog.constraints):
        assert math.isclose(a(**pt), b(**pt), rel_tol=1e-14)


def test_json_rejects_unknown_schema(rng):
    doc = random_gp(rng).to_dict()
    doc["schema_version"] = 99
    with pytest.raises(ValueError):
        GpProgram.from_dict(doc)


# --- analytic problems -----------------------------------------------------


def test_min_x_with_inverse_constraint():
    res = solve(GpProgram(x, [1 / x]))
    assert res.status == "optimal"
    assert abs(res.values["x"] - 1.0) <= 1e-8
    assert abs(res.objective - 1.0) <= 1e-8


def test_min_x_plus_y_with_product_constraint():
    res = solve(GpProgram(x + y, [1 / (x * y)]))
    assert res.status == "optimal"
    assert abs(res.values["x"] - 1.0) <= 1e-8
    assert abs(res.values["y"] - 1.0) <= 1e-8
    assert abs(res.objective - 2.0) <= 1e-8


@pytest.mark.parametrize("a", [0.3, 1.0, 7.5])
def test_dual_of_lower_bound_constraint_is_one(a):
    prog = GpProgram(x, [a / x])
    res = solve(prog)
    assert math.isclose(res.values["x"], a, rel_tol=1e-8)
    assert abs(res.duals[0] - 1.0) <= 1e-6
    rep = check_kkt(prog, res.values)
    assert abs(rep.duals[0] - 1.0) <= 1e-6


def test_unconstrained_minimum():
    # x + 1/x has its minimum 2 at x = 1
    res = solve(GpProgram(x + 1 / x))
    assert res.status == "optimal"
    assert math.isclose(res.values["x"], 1.0, rel_tol=1e-6)
    assert math.isclose(res.objective, 2.0, rel_tol=1e-10)


def test_unbounded_detected():
    res = solve(GpProgram(x, [x * y]))
    assert res.status == "unbounded"


def test_infeasible_detected():
    # x <= 0.5 and 1/x <= 1 cannot hold together
    res = solve(GpProgram(x, [2 * x, 1 / x]))
    assert res.status == "infeasible"


def test_bounds_respected():
    res = solve(GpProgram(1 / x, bounds={"x": (None, 3.0)}))
    assert math.isclose(res.values["x"], 3.0, rel_tol=1e-7)


def test_infeasible_start_is_repaired():
    prog = GpProgram(x + y, [1 / (x * y), x / 10])
    res = solve(prog, x0={"x": 100.0, "y": 1e-3})
    assert res.status == "optimal"
    assert math.isclose(res.objective, 2.0, rel_tol=1e-7)


def test_max_iter_status():
    res = solve(GpProgram(x + y, [1 / (x * y)]), max_iter=2)
    assert res.status == "max-iter"


# --- KKT -------------------------------------------------------------------


def test_solution_passes_kkt(rng):
    for _ in range(5):
        prog = random_gp(rng)
        res = solve(prog, tol=1e-8)
        assert res.ok
        assert check_kkt(prog, res.values, tol=1e-6).passed


def test_perturbed_point_fails_stationarity():
    prog = GpProgram(x + y, [1 / (x * y)])
    res = solve(prog)
    bad = dict(res.values)
    bad["x"] *= 1.1
    rep = check_kkt(prog, bad, tol=1e-6)
    assert rep.stationarity > 1e-3 or rep.infeasibility > 1e-3
    assert not rep.passed


def test_kkt_slack_sign():
    prog = GpProgram(x, [0.5 / x])
    rep = check_kkt(prog, {"x": 1.0})
    assert rep.slack[0] > 0
    rep = check_kkt(prog, {"x": 0.25})
    assert rep.infeasibility > 0


# --- properties ------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
def test_scale_invariance(seed, scale):
    prog = random_gp(np.random.default_rng(seed))
    scaled = GpProgram(prog.objective * scale, prog.constraints, prog.bounds, prog.variables)
    a, b = solve(prog), solve(scaled)
    assert a.ok and b.ok
    for name in prog.variables:
        assert abs(math.log(a.values[name]) - math.log(b.values[name])) <= 1e-4
    assert math.isclose(b.objective, scale * a.objective, rel_tol=1e-6)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_output_feasible(seed):
    prog = random_gp(np.random.default_rng(seed))
    res = solve(prog, tol=1e-8)
    assert res.ok
    for c in prog.all_constraints():
        assert c(**res.values) <= 1 + 1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t=st.floats(0.0, 1.0))
def test_log_domain_convexity(seed, t):
    rng = np.random.default_rng(seed)
    prog = random_gp(rng)
    ya, yb = rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3)
    names = prog.variables

    def f(v):
        return prog.objective.log_eval(dict(zip(names, v)))

    mid = t * ya + (1 - t) * yb
    assert f(mid) <= t * f(ya) + (1 - t) * f(yb) + 1e-12
    assert f(0.5 * (ya + yb)) <= max(f(ya), f(yb)) + 1e-12


def test_matches_grid_oracle():
    rng = np.random.default_rng(3)
    for _ in range(3):
        prog = random_gp(rng)
        res = solve(prog)
        ref = grid_oracle(prog)
        assert res.ok
        assert abs(res.objective - ref) / ref <= 1e-4


def test_matches_cvxpy():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(11)
    for _ in range(5):
        prog = random_gp(rng)
        var = {n: cp.Variable(pos=True, name=n) for n in prog.variables}

        def expr(posy):
            out = 0
            for t in posy.terms:
                m = t.coeff
                for n, a in t.exponents.items():
                    m = m * var[n] ** a
                out = out + m
            return out

        cons = [expr(c) <= 1 for c in prog.all_constraints()]
        ref = cp.Problem(cp.Minimize(expr(prog.objective)), cons).solve(gp=True)
        res = solve(prog)
        assert abs(res.objective - ref) / ref <= 1e-5


def test_dense_and_sparse_paths_agree(rng, monkeypatch):
    prog = random_gp(rng)
    dense = solve(prog)
    monkeypatch.setattr(gp, "DENSE_LIMIT", 0)
    sparse = solve(prog)
    assert math.isclose(dense.objective, sparse.objective, rel_tol=1e-10)
