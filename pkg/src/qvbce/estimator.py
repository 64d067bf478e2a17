"""Outer EP loop coupling the three modules, plus the AQNM / unquantized /
least-squares variants and the sequential tracker.

Schedule per outer iteration:
  1. componentwise MMSE extrinsic for z (quantized or Gaussian likelihood);
  2. linear module posterior/extrinsic for h;
  3. line-spectral module posterior for h;
  4. its extrinsic back toward the linear module;
  5. linear module posterior/extrinsic for z, closing the loop.

Step 5 divides by the MMSE-side extrinsic by default (the EP definition);
EstimatorConfig.z_cavity = "previous-b" reproduces the literal alternative
that divides by the previous linear-side extrinsic instead.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lmmse, valse
from .messages import GaussianMessage, damp, extrinsic
from .mmse import Observation, module_c_step
from .quantizer import IDENTITY, aqnm_noise_variance, representation_values
from .valse import ValseConfig

V_MAX_FACTOR = 1e8


@dataclass
class EstimatorConfig:
    variant: str = "gl-qvbce"
    max_outer_iters: int = 20
    outer_tol: float = 1e-6
    damping: float = 1.0
    z_cavity: str = "mmse-extrinsic"     # or "previous-b"
    valse: ValseConfig = field(default_factory=ValseConfig)
    track_iterates: bool = False
    warm_start_valse: bool = True

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters >= 1 required")
        if self.z_cavity not in ("mmse-extrinsic", "previous-b"):
            raise ValueError("unknown z_cavity rule")


@dataclass
class ChannelEstimate:
    h_hat: np.ndarray
    h_var: np.ndarray
    l_hat: int
    theta_hat: np.ndarray
    g_hat: np.ndarray
    varphi_hat: np.ndarray
    freq_posteriors: list
    iterations_used: int
    converged: bool
    component_posteriors: list = None    # all N candidate beliefs (sequential use)
    history: list = None                 # per-iteration h estimates if tracked


def _build_observation(data, quantizer, sigma2, n_comp):
    if isinstance(data, tuple):
        codes_re, codes_im = data
        if quantizer is None:
            raise ValueError("codes given without a quantizer spec")
        spec = quantizer
    else:
        y = np.asarray(data, dtype=complex)
        codes_re, codes_im = y.real, y.imag
        spec = IDENTITY
    codes_re = np.asarray(codes_re)
    codes_im = np.asarray(codes_im)
    if codes_re.size != n_comp or codes_im.size != n_comp:
        raise ValueError("observation length must be M*T")
    return Observation(codes_re=codes_re, codes_im=codes_im, spec=spec, sigma2=sigma2)


def _point_estimates(vres):
    """Path estimates from the final line-spectral posterior, sorted by theta."""
    idx = np.flatnonzero(vres.support.s)
    mus = np.array([vres.posteriors[i].mu for i in idx])
    order = np.argsort(mus, kind="stable")
    beta = vres.support.beta_hat[order]
    return (mus[order], np.abs(beta), np.angle(beta),
            [vres.posteriors[idx[o]] for o in order])


def estimate(data, pilot, geom, sigma2, quantizer=None, config=None, power=1.0,
             priors=None):
    """Run the full message-passing loop and return the channel estimate.

    data: complex (M*T,) vector for the unquantized variant, or a
    (codes_re, codes_im) tuple together with a quantizer spec.
    """
    cfg = config or EstimatorConfig()
    m = geom.m
    t = pilot.t
    obs = _build_observation(data, quantizer, sigma2, m * t)
    v_max = V_MAX_FACTOR * (power + sigma2)

    a_to_h = GaussianMessage(np.zeros(m, complex), np.full(m, v_max))
    b_to_z = GaussianMessage(np.zeros(m * t, complex), np.full(m * t, power + sigma2))

    warm = None
    h_prev = None
    vres = None
    history = [] if cfg.track_iterates else None
    converged = False
    iters = 0

    for iters in range(1, cfg.max_outer_iters + 1):
        z_c_ext = module_c_step(b_to_z, obs, v_max)
        model = lmmse.PseudoLinearModel(pilot=pilot, z_tilde=z_c_ext.mean,
                                        sigma_w2_tilde=z_c_ext.var)
        b_to_h = lmmse.module_b_to_h(model, a_to_h, v_max)

        problem = valse.LsePseudoProblem(h_tilde=b_to_h.mean, v_tilde=b_to_h.var,
                                         geom=geom, priors=priors)
        vres = valse.run_valse(problem, cfg.valse, state=warm)
        if cfg.warm_start_valse:
            warm = vres.state

        a_post = GaussianMessage(vres.h_mean, vres.h_var)
        new_a_to_h = extrinsic(a_post, b_to_h, v_max)
        a_to_h = damp(new_a_to_h, a_to_h, cfg.damping)

        cavity = z_c_ext if cfg.z_cavity == "mmse-extrinsic" else b_to_z
        new_b_to_z = lmmse.z_posterior_and_extrinsic(model, a_to_h, cavity, v_max)
        b_to_z = damp(new_b_to_z, b_to_z, cfg.damping)

        h_cur = vres.h_mean
        if history is not None:
            history.append(h_cur.copy())
        if h_prev is not None:
            denom = np.linalg.norm(h_prev)
            delta = np.linalg.norm(h_cur - h_prev)
            if (denom == 0 and delta == 0) or (denom > 0 and delta / denom < cfg.outer_tol):
                converged = True
                break
        h_prev = h_cur.copy()

    theta_hat, g_hat, varphi_hat, freq_posts = _point_estimates(vres)
    return ChannelEstimate(h_hat=vres.h_mean.copy(), h_var=vres.h_var.copy(),
                           l_hat=vres.l_hat, theta_hat=theta_hat, g_hat=g_hat,
                           varphi_hat=varphi_hat, freq_posteriors=freq_posts,
                           iterations_used=iters, converged=converged,
                           component_posteriors=vres.posteriors, history=history)


def aqnm_equivalent(codes, spec, sigma2, power=1.0):
    """Additive-noise surrogate for quantized data: representation values as
    pseudo observations plus the inflated noise level sigma2 + 3 sigma_z^2/4^B."""
    codes_re, codes_im = codes
    rep_re = representation_values(spec, codes_re).astype(float)
    rep_im = representation_values(spec, codes_im).astype(float)
    if spec.bit_depth == 1:
        # One-bit representations are +-1; scale to the uniform family's
        # half-step 3 sigma_z / 2^1.5 so amplitudes stay power-consistent.
        scale = 3.0 * np.sqrt(power) / 2.0 ** 1.5
        rep_re = rep_re * scale
        rep_im = rep_im * scale
    y_eq = rep_re + 1j * rep_im
    sigma_eff = sigma2 + aqnm_noise_variance(spec.bit_depth, power)
    return y_eq, sigma_eff


def estimate_aqnm(codes, pilot, geom, sigma2, spec, config=None, power=1.0,
                  priors=None):
    """Quantization treated as additive noise; the Gaussian-likelihood loop
    then runs unchanged on the surrogate observations."""
    y_eq, sigma_eff = aqnm_equivalent(codes, spec, sigma2, power)
    return estimate(y_eq, pilot, geom, sigma_eff, quantizer=None, config=config,
                    power=power, priors=priors)


def estimate_ls(y, pilot):
    """Pilot-matched per-antenna average; no structural model, so no paths."""
    x = pilot.x
    energy = float(np.sum(np.abs(x) ** 2))
    if energy == 0:
        raise ValueError("zero pilot energy")
    y = np.asarray(y, dtype=complex)
    ymat = y.reshape(pilot.t, -1)
    h_hat = (np.conj(x)[:, None] * ymat).sum(axis=0) / energy
    return ChannelEstimate(h_hat=h_hat, h_var=None, l_hat=None,
                           theta_hat=np.array([]), g_hat=np.array([]),
                           varphi_hat=np.array([]), freq_posteriors=[],
                           iterations_used=0, converged=True)


def estimate_sequential(blocks, geom, sigma2, quantizer=None, config=None,
                        power=1.0, lam=0.1):
    """Estimate a stream of pilot blocks, carrying damped frequency beliefs.

    blocks: sequence of (data, pilot) pairs sharing geometry and noise level.
    Amplitudes are re-estimated fresh each block; only the frequency beliefs
    persist, with concentrations scaled by lam.
    """
    if not 0 < lam <= 1:
        raise ValueError("lambda must be in (0, 1]")
    priors = None
    results = []
    for data, pilot in blocks:
        est = estimate(data, pilot, geom, sigma2, quantizer=quantizer,
                       config=config, power=power, priors=priors)
        priors = valse.set_sequential_prior(est.component_posteriors, lam)
        results.append(est)
    return results
