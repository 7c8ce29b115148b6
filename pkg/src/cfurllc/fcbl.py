"""Closed-form finite-blocklength rate bounds for MRT downlink.

The normal-approximation rate of a device with SINR ``gamma`` is written
through ``f(x) = ln(1 + 1/x) - alpha * sqrt(2x + 1) / (x + 1)`` evaluated
at ``x = 1/gamma``, where ``alpha = Qinv(eps) / sqrt(L (1 - eta))`` and
``eta = tau / L`` is the pilot fraction of the blocklength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc, logsumexp, ndtri

from .model import NetworkInstance

MAX_ROOT_ITERS = 200


class ConvergenceError(RuntimeError):
    """A root search hit its iteration cap."""


class FeasibilityDomainError(ValueError):
    """Argument outside the region where the rate function is defined."""

    def __init__(self, message, boundary=None):
        super().__init__(message)
        self.boundary = boundary


class InfeasibleRequirement(ValueError):
    """A rate target that cannot be met at the given blocklength and DEP."""

    def __init__(self, message, device=None):
        super().__init__(message)
        self.device = device


def q_function(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def q_inverse(epsilon: float) -> float:
    """Solve Q(x) = epsilon; ``-ndtri(eps)`` stays accurate for tiny eps."""
    eps = float(epsilon)
    if not 0.0 < eps < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return float(-ndtri(eps))


def g_func(x):
    """Rate-zero boundary function ``(x+1) ln(1+1/x) / sqrt(2x+1)``; decreasing in x."""
    x = np.asarray(x, dtype=float)
    return (x + 1.0) * np.log1p(1.0 / x) / np.sqrt(2.0 * x + 1.0)


def _root_log(fun, lo, hi, rtol=1e-12):
    """Root of a decreasing ``fun`` on [lo, hi], found by Brent's method in log x."""
    h = lambda t: fun(math.exp(t))  # noqa: E731
    a, b = math.log(lo), math.log(hi)
    # signs are re-checked in t because exp(log(x)) need not round back to x
    if h(b) >= 0:
        return math.exp(b)
    if h(a) <= 0:
        return math.exp(a)
    return math.exp(brentq(h, a, b, xtol=rtol, rtol=4 * np.finfo(float).eps, maxiter=MAX_ROOT_ITERS))


def _bracket(fun, start):
    """Log-spaced bracket [lo, hi] with fun(lo) >= 0 >= fun(hi) for decreasing fun."""
    lo = hi = start
    while fun(lo) < 0:
        lo /= 4.0
        if lo < 1e-300:
            raise ConvergenceError("no lower bracket")
    while fun(hi) > 0:
        hi *= 4.0
        if hi > 1e300:
            raise ConvergenceError("no upper bracket")
    return lo, hi


def g_inverse(y: float) -> float:
    """Solve g(x) = y.  Returns ``inf`` for ``y <= 0`` (g never reaches zero)."""
    y = float(y)
    if y <= 0:
        return math.inf
    # g(x) ~ 1 / sqrt(2x) for large x, which seeds the bracket for small y
    if y < 1e-100:
        return math.inf
    start = 1.0 if y > 0.1 else 0.5 / y / y
    fun = lambda x: float(g_func(x)) - y  # noqa: E731
    lo, hi = _bracket(fun, start)
    return _root_log(fun, lo, hi)


def f_func(x, alpha: float):
    """Finite-blocklength rate kernel on its feasible region ``0 < x <= g^-1(alpha)``."""
    x_arr = np.asarray(x, dtype=float)
    xmax = g_inverse(alpha)
    if np.any(~(x_arr > 0)) or np.any(x_arr > xmax * (1 + 1e-12)):
        raise FeasibilityDomainError(f"x outside (0, {xmax:.6g}]", boundary=xmax)
    out = np.log1p(1.0 / x_arr) - alpha * np.sqrt(2.0 * x_arr + 1.0) / (x_arr + 1.0)
    return float(out) if out.ndim == 0 else out


def f_inverse(target: float, alpha: float) -> float:
    """Solve f(x) = target on the feasible region.  ``1/x`` is the SINR needed
    to reach a normalised rate ``target``."""
    target = float(target)
    if target < 0:
        raise FeasibilityDomainError("negative target lies outside the feasible region")
    xmax = g_inverse(alpha)
    if target == 0:
        return xmax
    fun = lambda x: float(np.log1p(1.0 / x) - alpha * math.sqrt(2 * x + 1) / (x + 1)) - target  # noqa: E731
    if math.isfinite(xmax):
        lo, hi = _bracket(fun, xmax / 2.0)
        hi = min(hi, xmax)
    else:
        lo, hi = _bracket(fun, 1.0)
    return _root_log(fun, lo, hi)


def dispersion_sqrt(gamma):
    """sqrt(1 - (1 + gamma)^-2), the square-root channel dispersion."""
    g = np.asarray(gamma, dtype=float)
    return np.sqrt(-np.expm1(-2.0 * np.log1p(g)))


@dataclass(frozen=True, eq=False)
class QosSpec:
    """Per-device reliability, rate and weight, plus blocklength and pilot length."""

    epsilon: np.ndarray
    rate_req: np.ndarray
    weight: np.ndarray
    L: int = 100
    tau: int = 1

    def __post_init__(self):
        for name in ("epsilon", "rate_req", "weight"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any((self.epsilon <= 0) | (self.epsilon >= 0.5)):
            raise ValueError("epsilon must lie in (0, 0.5)")
        if np.any(self.weight < 0) or np.any(self.rate_req < 0):
            raise ValueError("weights and rate requirements must be non-negative")
        if not 1 <= self.tau:
            raise ValueError("tau must be at least 1")

    @classmethod
    def uniform(cls, K, epsilon=1e-7, rate_req=0.75, weight=1.0, L=100, tau=1):
        w = np.broadcast_to(np.asarray(weight, dtype=float), (K,))
        return cls(np.full(K, epsilon), np.full(K, rate_req), w, L, tau)

    @property
    def K(self) -> int:
        return self.epsilon.size

    @property
    def eta(self) -> float:
        return self.tau / self.L

    @property
    def degenerate(self) -> bool:
        """True when the pilot consumes the whole blocklength."""
        return self.tau >= self.L

    def with_tau(self, tau: int) -> "QosSpec":
        return replace(self, tau=int(tau))

    def alpha(self) -> np.ndarray:
        """Per-device dispersion penalty ``Qinv(eps) / sqrt(L (1 - eta))``."""
        if self.degenerate:
            return np.full(self.K, np.inf)
        scale = math.sqrt(self.L * (1.0 - self.eta))
        return np.array([q_inverse(e) for e in self.epsilon]) / scale


def _group_index(groups: Sequence[Sequence[int]], K: int) -> np.ndarray:
    owner = np.full(K, -1, dtype=int)
    for g, members in enumerate(groups):
        for k in members:
            if owner[k] != -1:
                raise ValueError(f"device {k} appears in two pilot groups")
            owner[k] = g
    if np.any(owner < 0):
        raise ValueError("pilot groups must cover every device")
    return owner


def pilot_load(tau, pilot_powers, beta, groups) -> tuple[np.ndarray, np.ndarray]:
    """Per-(AP, group) received pilot energy plus noise, ``sum_i tau p_i beta_mi + 1``.

    Returns the [M, G] load matrix and the group index of every device.
    """
    beta = np.asarray(beta, dtype=float)
    p = np.asarray(pilot_powers, dtype=float)
    owner = _group_index(groups, beta.shape[1])
    onehot = np.zeros((beta.shape[1], len(groups)))
    onehot[np.arange(beta.shape[1]), owner] = 1.0
    return tau * (beta * p) @ onehot + 1.0, owner


def lambda_gain(tau, pilot_powers, beta, groups) -> np.ndarray:
    """MMSE estimate variance per antenna, ``lambda[m, k]``."""
    beta = np.asarray(beta, dtype=float)
    load, owner = pilot_load(tau, pilot_powers, beta, groups)
    return tau * np.asarray(pilot_powers, dtype=float) * beta**2 / load[:, owner]


def same_group(groups, K) -> np.ndarray:
    """Boolean [K, K] matrix of devices sharing a pilot, diagonal excluded."""
    owner = _group_index(groups, K)
    share = owner[:, None] == owner[None, :]
    np.fill_diagonal(share, False)
    return share


def sinr_lb(instance: NetworkInstance, lam, downlink, groups) -> np.ndarray:
    """SINR whose rate lower-bounds the ergodic rate under MRT (per device).

    ``lam`` is the [M, K] estimate-gain matrix and ``downlink`` the [M, K]
    power matrix (entries outside the service sets are ignored).
    """
    D = np.asarray(downlink, dtype=float) * instance.service_mask
    lam = np.asarray(lam, dtype=float)
    N = instance.N
    coherent = np.sqrt(D * lam).sum(axis=0)
    signal = N * coherent**2
    interference = instance.beta.T @ D.sum(axis=1)
    # cross[k', k] = sum_m sqrt(p_{m,k'} lambda_{m,k}) over the APs serving k'
    cross = np.sqrt(D).T @ np.sqrt(lam)
    contamination = N * ((cross**2) * same_group(groups, instance.K)).sum(axis=0)
    return signal / (interference + contamination + 1.0)


def rate_from_sinr(gamma, alpha, eta: float):
    """Normalised-rate bound in bit/s/Hz, clamped at zero below the feasibility edge."""
    gamma = np.asarray(gamma, dtype=float)
    if eta >= 1.0:
        return np.zeros_like(gamma)
    kernel = np.log1p(gamma) - np.asarray(alpha) * dispersion_sqrt(gamma)
    return (1.0 - eta) / math.log(2.0) * np.maximum(kernel, 0.0)


def lb_rate(gamma_hat, qos: QosSpec) -> np.ndarray:
    """Per-device lower-bound rate for the pilot length stored in ``qos``."""
    if qos.degenerate:
        return np.zeros(qos.K)
    return rate_from_sinr(gamma_hat, qos.alpha(), qos.eta)


class RewriteTerms(NamedTuple):
    """Product-form SINR pieces for one device, kept as natural logs.

    ``log_phi`` and ``log_theta`` are keyed by the co-pilot device index;
    ``log_theta`` includes the device itself.
    """

    log_varphi: float
    log_phi: dict
    log_theta: dict
    log_de: float
    gamma: float


def _logsumexp(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.all(values == -np.inf):
        return -np.inf
    return float(logsumexp(values))


def sinr_rewrite_terms(instance, pilot_powers, downlink, groups, tau, k) -> RewriteTerms:
    """Evaluate the product form ``N varphi^2 prod theta^2 / De`` of device ``k``'s SINR.

    All products of per-AP pilot loads are carried in the log domain since
    they overflow for large groups.
    """
    beta = instance.beta
    p = np.asarray(pilot_powers, dtype=float)
    D = np.asarray(downlink, dtype=float)
    load, owner = pilot_load(tau, p, beta, groups)
    log_u = np.log(load[:, owner[k]])
    mates = [j for j in groups[owner[k]] if j != k]
    with np.errstate(divide="ignore"):
        log_tp = math.log(tau * p[k]) if p[k] > 0 else -np.inf

        def sum_of_roots(kp):
            aps = list(instance.serving_aps[kp])
            lu = log_u[aps]
            terms = 0.5 * (log_tp + np.log(D[aps, kp]) + 2 * np.log(beta[aps, k]) + lu.sum() - lu)
            return _logsumexp(terms)

        log_varphi = sum_of_roots(k)
        log_phi = {j: sum_of_roots(j) for j in mates}
    log_theta = {j: 0.5 * float(log_u[list(instance.serving_aps[j])].sum()) for j in [k, *mates]}
    theta_all = 2.0 * sum(log_theta.values())
    Dm = D * instance.service_mask
    interference = float(beta[:, k] @ Dm.sum(axis=1))
    parts = [theta_all + math.log(interference) if interference > 0 else -np.inf, theta_all]
    for j in mates:
        others = sum(log_theta[i] for i in mates if i != j)
        parts.append(math.log(instance.N) + 2 * log_theta[k] + 2 * (log_phi[j] + others))
    log_de = _logsumexp(parts)
    log_num = math.log(instance.N) + 2 * log_varphi + 2 * sum(log_theta[j] for j in mates)
    gamma = math.exp(log_num - log_de) if log_num > -np.inf else 0.0
    return RewriteTerms(log_varphi, log_phi, log_theta, log_de, gamma)
