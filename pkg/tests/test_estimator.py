"""Outer-loop estimator: variant collapse, baselines, invariances, tracking."""

import numpy as np
import pytest

from qvbce.arrays import (GroundTruthChannel, PilotBlock, full_ula,
                          synthesize_channel, synthesize_observation)
from qvbce.estimator import (ChannelEstimate, EstimatorConfig, aqnm_equivalent,
                             estimate, estimate_aqnm, estimate_ls,
                             estimate_sequential)
from qvbce.quantizer import IDENTITY, build_one_bit, build_uniform, quantize_complex
from qvbce.valse import uninformative_prior


def _scene(rng, m, t, l, sigma2, power=1.0):
    # Well separated DOA frequencies, gains near sqrt(power/l).
    theta = np.sort(rng.uniform(-2.4, 2.4, l))
    while l > 1 and np.diff(theta).min() < 4 * np.pi / m:
        theta = np.sort(rng.uniform(-2.4, 2.4, l))
    g = np.sqrt(power / l) * rng.uniform(0.8, 1.2, l)
    varphi = rng.uniform(-np.pi, np.pi, l)
    truth = GroundTruthChannel(theta=theta, g=g, varphi=varphi)
    geom = full_ula(m)
    synthesize_channel(geom, truth)
    phases = rng.uniform(0, 2 * np.pi, t)
    pilot = PilotBlock(np.exp(1j * phases))
    y = synthesize_observation(truth, pilot, sigma2, rng)
    return truth, geom, pilot, y


def _nmse_db(h_hat, h):
    return 10 * np.log10(np.sum(np.abs(h_hat - h) ** 2) / np.sum(np.abs(h) ** 2))


def test_identity_quantizer_matches_unquantized_per_iteration():
    rng = np.random.default_rng(1)
    cfg = EstimatorConfig(track_iterates=True)
    for _ in range(3):
        truth, geom, pilot, y = _scene(rng, 16, 2, 2, 0.1)
        a = estimate(y, pilot, geom, 0.1, config=cfg)
        b = estimate((y.real, y.imag), pilot, geom, 0.1, quantizer=IDENTITY,
                     config=cfg)
        assert len(a.history) == len(b.history)
        for ha, hb in zip(a.history, b.history):
            assert np.max(np.abs(ha - hb)) < 1e-8


def test_noiseless_single_path():
    rng = np.random.default_rng(2)
    truth, geom, pilot, _ = _scene(rng, 32, 1, 1, 1e-12)
    pilot = PilotBlock(np.array([1.0 + 0j]))
    y = np.kron(pilot.x, truth.h)
    est = estimate(y, pilot, geom, 1e-12)
    assert est.l_hat == 1
    rel = np.linalg.norm(est.h_hat - truth.h) / np.linalg.norm(truth.h)
    assert rel < 1e-3
    assert abs(est.theta_hat[0] - truth.theta[0]) < 1e-4


def test_ls_noiseless_exact():
    rng = np.random.default_rng(3)
    truth, geom, pilot, _ = _scene(rng, 24, 2, 2, 0.1)
    y = np.kron(pilot.x, truth.h)
    est = estimate_ls(y, pilot)
    np.testing.assert_allclose(est.h_hat, truth.h, atol=1e-12)
    assert est.l_hat is None and est.h_var is None


def test_ls_nmse_analytic_line():
    # Unit-power pilots, T=2, SNR=0: NMSE concentrates at sigma2/(T P) = -3 dB.
    rng = np.random.default_rng(4)
    m, t, sigma2 = 64, 2, 1.0
    num = den = 0.0
    for _ in range(200):
        truth, geom, pilot, y = _scene(rng, m, t, 3, sigma2)
        est = estimate_ls(y, pilot)
        num += np.sum(np.abs(est.h_hat - truth.h) ** 2)
        den += np.sum(np.abs(truth.h) ** 2)
    nmse_db = 10 * np.log10(num / den)
    assert abs(nmse_db - (-10 * np.log10(2))) < 0.5


def test_ls_error_independent_of_l_and_m():
    # The per-antenna error power is sigma2/T regardless of structure.
    rng = np.random.default_rng(5)
    sigma2, t = 1.0, 2
    means = []
    for m, l in ((16, 1), (16, 4), (64, 1), (64, 4)):
        err = 0.0
        for _ in range(150):
            truth, geom, pilot, y = _scene(rng, m, t, l, sigma2)
            est = estimate_ls(y, pilot)
            err += np.mean(np.abs(est.h_hat - truth.h) ** 2)
        means.append(err / 150)
    ref = sigma2 / t
    for v in means:
        assert abs(10 * np.log10(v / ref)) < 0.5


def test_ls_zero_pilot_energy_raises():
    class Stub:
        x = np.zeros(2, dtype=complex)
        t = 2

    with pytest.raises(ValueError):
        estimate_ls(np.zeros(4, complex), Stub())


def test_aqnm_surrogate_noise_level():
    spec = build_uniform(2, 1.0)
    y = np.array([0.3 + 0.9j, -1.4 - 0.2j])
    codes = quantize_complex(spec, y)
    y_eq, sigma_eff = aqnm_equivalent(codes, spec, 0.25, power=1.0)
    assert abs(sigma_eff - (0.25 + 3.0 / 16.0)) < 1e-15
    # Surrogate observations are the representation midpoints.
    from qvbce.quantizer import representation_values
    np.testing.assert_allclose(y_eq.real, representation_values(spec, codes[0]))
    np.testing.assert_allclose(y_eq.imag, representation_values(spec, codes[1]))


def test_aqnm_one_bit_scale():
    spec = build_one_bit()
    y = np.array([0.2 - 0.7j])
    codes = quantize_complex(spec, y)
    for power in (1.0, 4.0):
        y_eq, sigma_eff = aqnm_equivalent(codes, spec, 0.1, power=power)
        scale = 3.0 * np.sqrt(power) / 2.0 ** 1.5
        assert abs(abs(y_eq[0].real) - scale) < 1e-15
        assert abs(abs(y_eq[0].imag) - scale) < 1e-15
        assert abs(sigma_eff - (0.1 + 3.0 * power / 4.0)) < 1e-15


def test_estimate_aqnm_runs_and_beats_nothing_burned():
    rng = np.random.default_rng(6)
    truth, geom, pilot, y = _scene(rng, 32, 2, 2, 0.1)
    spec = build_one_bit()
    codes = quantize_complex(spec, y)
    est = estimate_aqnm(codes, pilot, geom, 0.1, spec)
    assert est.h_hat.shape == truth.h.shape
    assert np.all(np.isfinite(est.h_hat.view(float)))


def test_flat_priors_equal_no_priors():
    rng = np.random.default_rng(7)
    truth, geom, pilot, y = _scene(rng, 24, 2, 2, 0.05)
    a = estimate(y, pilot, geom, 0.05)
    b = estimate(y, pilot, geom, 0.05,
                 priors=[uninformative_prior() for _ in range(geom.m)])
    np.testing.assert_array_equal(a.h_hat, b.h_hat)
    assert a.l_hat == b.l_hat


def test_sequential_concentration_grows_on_repeated_blocks():
    rng = np.random.default_rng(8)
    truth, geom, pilot, _ = _scene(rng, 24, 2, 1, 1e-6)
    y = np.kron(pilot.x, truth.h)
    results = estimate_sequential([(y, pilot)] * 3, geom, 1e-6, lam=1.0)
    kappas = [max(p.kappa for p in r.component_posteriors) for r in results]
    assert kappas[1] > kappas[0]
    assert kappas[2] > kappas[1]
    for r in results:
        assert r.l_hat == 1


def test_sequential_lambda_validation():
    geom = full_ula(8)
    pilot = PilotBlock(np.ones(1, complex))
    blocks = [(np.zeros(8, complex), pilot)]
    with pytest.raises(ValueError):
        estimate_sequential(blocks, geom, 0.1, lam=0.0)
    with pytest.raises(ValueError):
        estimate_sequential(blocks, geom, 0.1, lam=1.0001)


def test_pilot_phase_rotation_invariance():
    # Rotating every pilot by a common phase rotates z but leaves h alone;
    # the Gaussian-likelihood estimate must not move.
    rng = np.random.default_rng(9)
    truth, geom, pilot, y = _scene(rng, 32, 2, 2, 0.05)
    phi = 1.234
    pilot2 = PilotBlock(pilot.x * np.exp(1j * phi))
    y2 = y * np.exp(1j * phi)
    a = estimate(y, pilot, geom, 0.05)
    b = estimate(y2, pilot2, geom, 0.05)
    assert np.max(np.abs(a.h_hat - b.h_hat)) < 1e-10


def test_init_variance_insensitivity():
    # Doubling power + sigma2 doubles the initial z variance and v_max; the
    # converged NMSE moves by at most 0.1 dB.
    rng = np.random.default_rng(10)
    sigma2 = 0.1
    for _ in range(4):
        truth, geom, pilot, y = _scene(rng, 32, 2, 2, sigma2)
        spec = build_uniform(2, 1.0)
        codes = quantize_complex(spec, y)
        a = estimate(codes, pilot, geom, sigma2, quantizer=spec, power=1.0)
        b = estimate(codes, pilot, geom, sigma2, quantizer=spec,
                     power=2.0 + sigma2)
        da = _nmse_db(a.h_hat, truth.h)
        db = _nmse_db(b.h_hat, truth.h)
        assert abs(da - db) <= 0.1


def test_outer_loop_converges_in_several_iterations():
    # Convergence-trajectory configuration: N=M=48, L=3, T=2, SNR=0, one-bit.
    # Convergence is the plotted quantity flattening: first iteration whose
    # NMSE is within 0.1 dB of the final iterate's.
    rng = np.random.default_rng(11)
    plateau = []
    spec = build_one_bit()
    cfg = EstimatorConfig(track_iterates=True, outer_tol=0.0)
    for _ in range(11):
        truth, geom, pilot, y = _scene(rng, 48, 2, 3, 1.0)
        codes = quantize_complex(spec, y)
        est = estimate(codes, pilot, geom, 1.0, quantizer=spec, config=cfg)
        curve = np.array([_nmse_db(h, truth.h) for h in est.history])
        plateau.append(1 + int(np.argmax(curve <= curve[-1] + 0.1)))
    assert np.median(plateau) <= 10


def test_max_outer_iters_respected():
    rng = np.random.default_rng(12)
    truth, geom, pilot, y = _scene(rng, 16, 2, 2, 0.5)
    cfg = EstimatorConfig(max_outer_iters=3, outer_tol=0.0)
    est = estimate(y, pilot, geom, 0.5, config=cfg)
    assert est.iterations_used == 3
    assert not est.converged


def test_track_iterates_history_length():
    rng = np.random.default_rng(13)
    truth, geom, pilot, y = _scene(rng, 16, 2, 1, 0.1)
    cfg = EstimatorConfig(track_iterates=True, max_outer_iters=6, outer_tol=0.0)
    est = estimate(y, pilot, geom, 0.1, config=cfg)
    assert len(est.history) == est.iterations_used == 6


def test_alternative_z_cavity_rule_works():
    rng = np.random.default_rng(14)
    truth, geom, pilot, y = _scene(rng, 32, 2, 2, 0.05)
    a = estimate(y, pilot, geom, 0.05)
    b = estimate(y, pilot, geom, 0.05,
                 config=EstimatorConfig(z_cavity="previous-b"))
    assert _nmse_db(b.h_hat, truth.h) < -8
    assert abs(_nmse_db(a.h_hat, truth.h) - _nmse_db(b.h_hat, truth.h)) < 3.0


def test_damped_run_matches_undamped_solution():
    rng = np.random.default_rng(15)
    truth, geom, pilot, y = _scene(rng, 24, 2, 1, 0.05)
    a = estimate(y, pilot, geom, 0.05)
    b = estimate(y, pilot, geom, 0.05, config=EstimatorConfig(damping=0.7))
    assert np.max(np.abs(a.h_hat - b.h_hat)) < 1e-3


def test_estimator_structure_gain_over_ls():
    # One-bit estimate with structure beats LS on unquantized data at SNR 0.
    rng = np.random.default_rng(16)
    spec = build_one_bit()
    gains = []
    for _ in range(6):
        truth, geom, pilot, y = _scene(rng, 48, 2, 3, 1.0)
        codes = quantize_complex(spec, y)
        q = estimate(codes, pilot, geom, 1.0, quantizer=spec)
        ls = estimate_ls(y, pilot)
        gains.append(_nmse_db(ls.h_hat, truth.h) - _nmse_db(q.h_hat, truth.h))
    assert np.mean(gains) > 0


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(max_outer_iters=0)
    with pytest.raises(ValueError):
        EstimatorConfig(z_cavity="bogus")


def test_codes_without_quantizer_rejected():
    geom = full_ula(8)
    pilot = PilotBlock(np.ones(1, complex))
    codes = (np.zeros(8), np.zeros(8))
    with pytest.raises(ValueError):
        estimate(codes, pilot, geom, 0.1)


def test_observation_length_checked():
    geom = full_ula(8)
    pilot = PilotBlock(np.ones(2, complex))
    with pytest.raises(ValueError):
        estimate(np.zeros(8, complex), pilot, geom, 0.1)
