"""Monte-Carlo simulation of pilot estimation and MRT downlink.

Pilot sequences are never built: devices in one group share a sequence and
distinct groups are orthogonal, so the projected pilot signal at AP ``m``
for group ``g`` is ``sum_{i in g} sqrt(tau p_i) g_mi + w_mg`` with unit
white noise ``w``.  The desired-signal coefficient uses its analytic mean
(the receiver knows only channel statistics), while beamforming gain
uncertainty and inter-user leakage are sampled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fcbl import QosSpec, lambda_gain, pilot_load, rate_from_sinr, same_group
from .model import _STREAMS, NetworkInstance, PowerProfile


@dataclass(frozen=True, eq=False)
class FadingDraw:
    """Small-scale fading ``h`` [S, M, K, N] and projected pilot noise [S, M, G, N]."""

    h: np.ndarray
    pilot_noise: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.h.shape[0]


def _cn(rng, shape):
    """Circularly-symmetric complex Gaussian with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def draw_fading(instance: NetworkInstance, n_groups: int, n_samples: int, rng) -> FadingDraw:
    M, K, N = instance.M, instance.K, instance.N
    h = _cn(rng, (n_samples, M, K, N))
    noise = _cn(rng, (n_samples, M, n_groups, N))
    return FadingDraw(h, noise)


def true_channels(draw: FadingDraw, instance: NetworkInstance) -> np.ndarray:
    return draw.h * np.sqrt(instance.beta)[None, :, :, None]


def estimate_channels(draw: FadingDraw, instance, tau, pilot_powers, groups) -> np.ndarray:
    """MMSE estimates ``g_hat`` [S, M, K, N] from the projected pilot signals."""
    p = np.asarray(pilot_powers, dtype=float)
    beta = instance.beta
    g = true_channels(draw, instance)
    load, owner = pilot_load(tau, p, beta, groups)
    onehot = np.zeros((instance.K, len(groups)))
    onehot[np.arange(instance.K), owner] = 1.0
    # received[s, m, grp] = sum_i sqrt(tau p_i) g_mi + w_m,grp
    received = np.einsum("smkn,kg->smgn", g * np.sqrt(tau * p)[None, None, :, None], onehot) + draw.pilot_noise
    gain = np.sqrt(tau * p)[None, :] * beta / load[:, owner]
    return received[:, :, owner, :] * gain[None, :, :, None]


class Terms(NamedTuple):
    """Desired-signal mean DS [K], beamforming-uncertainty LS [S, K] and
    inter-user leakage UI [S, K, K] (``UI[s, k, j]`` is device j's stream at k)."""

    ds: np.ndarray
    ls: np.ndarray
    ui: np.ndarray


def _precoder_weights(instance, lam, downlink) -> np.ndarray:
    """``sqrt(p_mj / (N lam_mj))`` on served pairs, zero elsewhere."""
    D = np.asarray(downlink, dtype=float) * instance.service_mask
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.sqrt(D / (instance.N * lam))
    return np.where((D > 0) & (lam > 0), w, 0.0)


def received_terms(draw: FadingDraw, instance, powers: PowerProfile, tau, groups) -> Terms:
    g = true_channels(draw, instance)
    ghat = estimate_channels(draw, instance, tau, powers.pilot, groups)
    lam = lambda_gain(tau, powers.pilot, instance.beta, groups)
    C = _precoder_weights(instance, lam, powers.downlink)
    # gain[s, k, j] = sum_m C_mj g_mk^H ghat_mj
    inner = np.einsum("smkn,smjn->smkj", g.conj(), ghat)
    gain = np.einsum("smkj,mj->skj", inner, C)
    D = np.asarray(powers.downlink, dtype=float) * instance.service_mask
    ds = np.sqrt(instance.N * D * lam).sum(axis=0)
    K = instance.K
    diag = np.arange(K)
    ls = gain[:, diag, diag] - ds[None, :]
    ui = gain.copy()
    ui[:, diag, diag] = 0.0
    return Terms(ds, ls, ui)


def instantaneous_sinr(draw: FadingDraw, instance, powers: PowerProfile, tau, groups) -> np.ndarray:
    """Per-sample SINR [S, K] with unit noise power."""
    t = received_terms(draw, instance, powers, tau, groups)
    interference = np.abs(t.ls) ** 2 + (np.abs(t.ui) ** 2).sum(axis=2) + 1.0
    return (np.abs(t.ds) ** 2)[None, :] / interference


def ls_closed_form(instance, downlink) -> np.ndarray:
    """E|LS_k|^2 = sum_{m serving k} p_mk beta_mk."""
    D = np.asarray(downlink, dtype=float) * instance.service_mask
    return (D * instance.beta).sum(axis=0)


def ui_closed_form(instance, lam, downlink, groups) -> np.ndarray:
    """E|UI_kj|^2 [K, K]: leakage power plus the coherent pilot-contamination part."""
    D = np.asarray(downlink, dtype=float) * instance.service_mask
    leak = instance.beta.T @ D
    cross = np.sqrt(D).T @ np.sqrt(lam)  # cross[j, k]
    out = leak + instance.N * (cross.T**2) * same_group(groups, instance.K)
    np.fill_diagonal(out, 0.0)
    return out


class McEstimate(NamedTuple):
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int


def _chunk_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(_STREAMS["montecarlo"], index))
    return np.random.default_rng(ss)


def _chunks(n_samples, chunk_size):
    sizes = [chunk_size] * (n_samples // chunk_size)
    if n_samples % chunk_size:
        sizes.append(n_samples % chunk_size)
    return sizes


def _rate_chunk(args):
    instance, powers, tau, groups, alpha, eta, seed, index, size = args
    draw = draw_fading(instance, len(groups), size, _chunk_rng(seed, index))
    gamma = instantaneous_sinr(draw, instance, powers, tau, groups)
    rates = rate_from_sinr(gamma, alpha[None, :], eta)
    return rates.sum(axis=0), (rates**2).sum(axis=0)


def _run(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _moments(parts, n):
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n
    var = np.maximum(s2 - n * mean**2, 0.0) / (n - 1)
    return mean, np.sqrt(var / n)


def ergodic_rate_mc(
    instance,
    powers: PowerProfile,
    qos: QosSpec,
    groups,
    n_samples: int = 1000,
    seed: int = 0,
    *,
    chunk_size: int = 250,
    workers: int = 1,
) -> McEstimate:
    """Mean and standard error of the per-sample finite-blocklength rate.

    Chunk ``i`` draws from its own seed-derived stream, so the estimate
    depends only on ``seed`` and ``chunk_size``, never on ``workers``.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    if qos.degenerate:
        return McEstimate(np.zeros(instance.K), np.zeros(instance.K), n_samples)
    alpha = qos.alpha()
    jobs = [(instance, powers, qos.tau, groups, alpha, qos.eta, seed, i, size) for i, size in enumerate(_chunks(n_samples, chunk_size))]
    mean, stderr = _moments(_run(_rate_chunk, jobs, workers), n_samples)
    return McEstimate(mean, stderr, n_samples)


def _term_chunk(args):
    instance, powers, tau, groups, seed, index, size = args
    draw = draw_fading(instance, len(groups), size, _chunk_rng(seed, index))
    t = received_terms(draw, instance, powers, tau, groups)
    ls2 = np.abs(t.ls) ** 2
    ui2 = np.abs(t.ui) ** 2
    return (ls2.sum(axis=0), (ls2**2).sum(axis=0)), (ui2.sum(axis=0), (ui2**2).sum(axis=0))


def term_moments(instance, powers: PowerProfile, tau, groups, n_samples: int = 100_000, seed: int = 0, *, chunk_size: int = 2000, workers: int = 1):
    """Sample means and standard errors of |LS_k|^2 [K] and |UI_kj|^2 [K, K]."""
    jobs = [(instance, powers, tau, groups, seed, i, size) for i, size in enumerate(_chunks(n_samples, chunk_size))]
    parts = _run(_term_chunk, jobs, workers)
    ls = McEstimate(*_moments([p[0] for p in parts], n_samples), n_samples)
    ui = McEstimate(*_moments([p[1] for p in parts], n_samples), n_samples)
    return ls, ui
