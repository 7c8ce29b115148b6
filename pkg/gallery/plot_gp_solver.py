"""
Solving a small geometric program
=================================

The package ships its own log-barrier GP solver.  Posynomials are built from
``variable`` objects with ordinary arithmetic; constraints read ``p <= 1``.
"""

from cfurllc import gp

x, y, z = gp.variable("x"), gp.variable("y"), gp.variable("z")

# %%
# Minimise a box surface area subject to a volume floor and a wall budget.

prog = gp.GpProgram(
    2 * (x * y + y * z + x * z),
    [8 / (x * y * z), (x + y) / 6],
)
res = gp.solve(prog)
print(res.status, round(res.objective, 6), {k: round(v, 6) for k, v in res.values.items()})

# %%
# The returned multipliers satisfy the optimality conditions.

print(gp.check_kkt(prog, res.values))
