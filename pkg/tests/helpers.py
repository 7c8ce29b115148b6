import numpy as np
from cfurllc.model import NetworkInstance, PowerBudget, generate_instance


def tiny_instance(beta, serving, N=2):
    """Hand-built instance with the given [M, K] gains and serving sets."""
    beta = np.asarray(beta, dtype=float)
    M, K = beta.shape
    return NetworkInstance(np.zeros((M, 2)), np.zeros((K, 2)), N, beta, tuple(tuple(s) for s in serving), 0.75)


def random_groups(rng, K, n_groups):
    """Random partition of range(K) into at most n_groups non-empty groups."""
    labels = rng.integers(0, n_groups, size=K)
    return [tuple(np.flatnonzero(labels == g)) for g in range(n_groups) if np.any(labels == g)]


def random_powers(rng, instance, scale=0.1):
    """Random positive pilot powers and downlink powers on served pairs."""
    pilot = rng.uniform(0.1, 1.0, instance.K) * scale
    downlink = rng.uniform(0.1, 1.0, (instance.M, instance.K)) * instance.service_mask * scale
    return pilot, downlink


# --- GP oracles -----------------------------------------------------------

GP_BOX = (0.1, 10.0)


def random_gp(rng, n_obj=3, n_cons=2):
    """Random 3-variable GP over the box ``GP_BOX`` with (1, 1, 1) strictly feasible."""
    from cfurllc.gp import GpProgram, Monomial, Posynomial

    names = ("x", "y", "z")

    def mono(scale):
        return Monomial(dict(zip(names, rng.uniform(-1.0, 1.0, 3))), coeff=scale)

    objective = Posynomial([mono(rng.uniform(0.5, 2.0)) for _ in range(n_obj)])
    cons = [Posynomial([mono(rng.uniform(0.1, 0.45)) for _ in range(2)]) for _ in range(n_cons)]
    return GpProgram(objective, cons, {n: GP_BOX for n in names}, list(names))


def _log_posy(posy, names, grids):
    """log of a posynomial on broadcast log-variable grids."""
    z = [t.log_coeff + sum(t.exponents.get(n, 0.0) * g for n, g in zip(names, grids)) for t in posy.terms]
    z = np.broadcast_arrays(*z)
    zmax = np.max(z, axis=0)
    return zmax + np.log(sum(np.exp(zi - zmax) for zi in z))


def _grid_best(program, axes):
    names = program.variables
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    obj = _log_posy(program.objective, names, grids)
    for c in program.constraints:
        obj = np.where(_log_posy(c, names, grids) <= 0.0, obj, np.inf)
    idx = np.unravel_index(np.argmin(obj), obj.shape)
    return np.array([a[i] for a, i in zip(axes, idx)]), float(obj[idx])


def grid_oracle(program, n=200, zooms=24, n_zoom=61, width=10):
    """Log-grid search over the box, refined by zoomed sub-grids and a final
    coordinate-descent polish.  Returns the minimal objective value found."""
    import scipy.optimize as so

    lo, hi = (np.log(v) for v in GP_BOX)
    axes = [np.linspace(lo, hi, n)] * len(program.variables)
    y, best = _grid_best(program, axes)
    h = (hi - lo) / (n - 1)
    for _ in range(zooms):
        axes = [np.clip(np.linspace(c - width * h, c + width * h, n_zoom), lo, hi) for c in y]
        y, best = _grid_best(program, axes)
        h = 2 * width * h / (n_zoom - 1)
    names = program.variables

    def penalised(v):
        pts = [np.asarray(x) for x in v]
        if any(c_ > 0 for c_ in (_log_posy(c, names, pts) for c in program.constraints)):
            return np.inf
        return float(_log_posy(program.objective, names, pts))

    for _ in range(5):
        for j in range(len(y)):
            def along(t, j=j):
                v = y.copy()
                v[j] = t
                return penalised(v)

            r = so.minimize_scalar(along, bounds=(max(lo, y[j] - 4 * h), min(hi, y[j] + 4 * h)), method="bounded", options={"xatol": 1e-12})
            if r.fun < best:
                best, y[j] = r.fun, r.x
    return float(np.exp(best))
