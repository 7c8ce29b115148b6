import numpy as np
import pytest

from cfurllc import montecarlo as mc
from cfurllc.fcbl import QosSpec, lambda_gain, lb_rate, sinr_lb
from cfurllc.model import PowerBudget, PowerProfile, equal_power_profile, generate_instance

from helpers import tiny_instance


@pytest.fixture(scope="module")
def setup():
    inst = generate_instance(21, M=4, K=4, N=2)
    # a co-pilot pair exercises the coherent contamination term
    groups = [(0, 3), (1,), (2,)]
    profile = equal_power_profile(inst, PowerBudget.uniform(inst))
    return inst, groups, profile


def test_draw_statistics(rng):
    inst = generate_instance(0, M=4, K=3, N=2)
    d = mc.draw_fading(inst, 3, 20000, rng)
    assert d.h.shape == (20000, 4, 3, 2)
    assert d.pilot_noise.shape == (20000, 4, 3, 2)
    # unit complex variance, half per real dimension
    assert abs(d.h.real.var() - 0.5) < 0.01
    assert abs(d.h.imag.var() - 0.5) < 0.01
    assert abs(np.mean(d.h.real * d.h.imag)) < 0.01


def test_estimate_variance_is_lambda(setup, rng):
    inst, groups, profile = setup
    tau = len(groups)
    d = mc.draw_fading(inst, tau, 40000, rng)
    ghat = mc.estimate_channels(d, inst, tau, profile.pilot, groups)
    lam = lambda_gain(tau, profile.pilot, inst.beta, groups)
    emp = (np.abs(ghat) ** 2).mean(axis=(0, 3))
    assert np.allclose(emp, lam, rtol=0.02)


def test_mmse_error_orthogonal_to_estimate(setup, rng):
    inst, groups, profile = setup
    tau = len(groups)
    d = mc.draw_fading(inst, tau, 40000, rng)
    g = mc.true_channels(d, inst)
    ghat = mc.estimate_channels(d, inst, tau, profile.pilot, groups)
    err = g - ghat
    corr = np.abs((err * ghat.conj()).mean(axis=(0, 3)))
    scale = np.sqrt((np.abs(err) ** 2).mean(axis=(0, 3)) * (np.abs(ghat) ** 2).mean(axis=(0, 3)))
    assert np.all(corr <= 0.03 * scale)


def test_co_pilot_estimates_are_parallel():
    inst = tiny_instance([[2.0, 0.5]], [[0], [0]], N=3)
    rng = np.random.default_rng(0)
    d = mc.draw_fading(inst, 1, 10, rng)
    ghat = mc.estimate_channels(d, inst, 1, np.array([0.1, 0.1]), [(0, 1)])
    ratio = ghat[:, 0, 0, :] / ghat[:, 0, 1, :]
    # ratio sqrt(p0) beta0 / (sqrt(p1) beta1) in every sample and antenna
    assert np.allclose(ratio, 4.0)


def test_terms_closed_form(setup):
    inst, groups, profile = setup
    tau = len(groups)
    ls, ui = mc.term_moments(inst, profile, tau, groups, n_samples=20000, seed=5)
    lam = lambda_gain(tau, profile.pilot, inst.beta, groups)
    ls_cf = mc.ls_closed_form(inst, profile.downlink)
    ui_cf = mc.ui_closed_form(inst, lam, profile.downlink, groups)
    assert np.all(np.abs(ls.mean - ls_cf) <= 4 * ls.stderr + 1e-12)
    off = ~np.eye(inst.K, dtype=bool)
    assert np.all(np.abs(ui.mean - ui_cf)[off] <= 4 * ui.stderr[off] + 1e-12)


def test_mean_sinr_bound_matches_closed_form(setup):
    # the bound's interference terms are the closed-form moments
    inst, groups, profile = setup
    tau = len(groups)
    lam = lambda_gain(tau, profile.pilot, inst.beta, groups)
    D = profile.downlink * inst.service_mask
    ds = np.sqrt(inst.N * D * lam).sum(axis=0)
    ui = mc.ui_closed_form(inst, lam, profile.downlink, groups)
    ls = mc.ls_closed_form(inst, profile.downlink)
    gamma = ds**2 / (ls + ui.sum(axis=1) + 1.0)
    assert np.allclose(gamma, sinr_lb(inst, lam, profile.downlink, groups), rtol=1e-10)


def test_bound_below_monte_carlo(setup):
    inst, groups, profile = setup
    qos = QosSpec.uniform(inst.K, rate_req=0.0, tau=len(groups))
    est = mc.ergodic_rate_mc(inst, profile, qos, groups, n_samples=2000, seed=1)
    lb = lb_rate(sinr_lb(inst, lambda_gain(qos.tau, profile.pilot, inst.beta, groups), profile.downlink, groups), qos)
    assert np.all(est.mean >= lb - 3 * est.stderr)


def test_noiseless_pilot_single_device_gain():
    # with negligible pilot noise the precoded gain is sqrt(p / (N lam)) ||g||^2
    inst = tiny_instance([[1e16]], [[0]], N=4)
    prof = PowerProfile(np.array([1.0]), np.array([[1e-6]]))
    rng = np.random.default_rng(2)
    d = mc.draw_fading(inst, 1, 500, rng)
    t = mc.received_terms(d, inst, prof, 1, [(0,)])
    lam = lambda_gain(1, prof.pilot, inst.beta, [(0,)])
    assert np.isclose(t.ds[0], np.sqrt(inst.N * 1e-6 * lam[0, 0]))
    gain = t.ls[:, 0] + t.ds[0]
    g = mc.true_channels(d, inst)[:, 0, 0, :]
    expected = np.sqrt(1e-6 / (inst.N * lam[0, 0])) * (np.abs(g) ** 2).sum(axis=1)
    assert np.allclose(gain, expected, rtol=1e-6)


def test_zero_power_gives_zero_rate(setup):
    inst, groups, profile = setup
    qos = QosSpec.uniform(inst.K, tau=len(groups))
    zero = PowerProfile(profile.pilot, np.zeros_like(profile.downlink))
    est = mc.ergodic_rate_mc(inst, zero, qos, groups, n_samples=200, seed=0)
    assert np.all(est.mean == 0.0)
    assert np.all(est.stderr == 0.0)


def test_deterministic_and_worker_independent(setup):
    inst, groups, profile = setup
    qos = QosSpec.uniform(inst.K, tau=len(groups))
    a = mc.ergodic_rate_mc(inst, profile, qos, groups, n_samples=600, seed=9, chunk_size=200)
    b = mc.ergodic_rate_mc(inst, profile, qos, groups, n_samples=600, seed=9, chunk_size=200)
    c = mc.ergodic_rate_mc(inst, profile, qos, groups, n_samples=600, seed=9, chunk_size=200, workers=2)
    assert np.array_equal(a.mean, b.mean)
    assert np.allclose(a.mean, c.mean, rtol=0, atol=1e-14)
    d = mc.ergodic_rate_mc(inst, profile, qos, groups, n_samples=600, seed=10, chunk_size=200)
    assert not np.array_equal(a.mean, d.mean)


def test_sample_floor(setup):
    inst, groups, profile = setup
    with pytest.raises(ValueError):
        mc.ergodic_rate_mc(inst, profile, QosSpec.uniform(inst.K), groups, n_samples=50)


def test_degenerate_pilot_length(setup):
    inst, groups, profile = setup
    qos = QosSpec.uniform(inst.K, L=len(groups), tau=len(groups))
    est = mc.ergodic_rate_mc(inst, profile, qos, groups, n_samples=100)
    assert np.all(est.mean == 0.0)
