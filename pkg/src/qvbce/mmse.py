"""Componentwise MMSE module: posterior moments of z under the quantized (or
Gaussian) likelihood given a Gaussian cavity, and the extrinsic back toward
the linear module.

Real and imaginary parts decouple: with cavity CN(m, v) and noise CN(0, s2),
the real part has prior N(Re m, v/2), additive noise N(0, s2/2) and an
interval observation [t_b, t_{b+1}).  Standardizing the latent pre-quantizer
value by ss = sqrt((v+s2)/2) gives cell edges (t - Re m)/ss, whose truncated
moments come from gausstails; the posterior over the signal part follows by
exact Gaussian conditioning:

    E[u | cell]   = m_r + (v/2)/ss * ms
    Var[u | cell] = (v/2) * ((s2/2) + (v/2)*vs) / ss^2

where (ms, vs) are the standardized truncated mean/variance.  The variance
form is cancellation-free (a sum of positives), so no precision is lost even
for near-flat cavities.
"""

from dataclasses import dataclass

import numpy as np

from .gausstails import trunc_std_moments
from .messages import GaussianMessage, extrinsic
from .quantizer import IdentityQuantizer


@dataclass
class Observation:
    """Quantizer output codes for both parts, plus the known noise variance.

    With the identity quantizer, codes_re/codes_im hold the raw real and
    imaginary values instead of integer codes.
    """

    codes_re: np.ndarray
    codes_im: np.ndarray
    spec: object
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")


def _part_moments(m_part, v, sigma2, codes, spec):
    """Posterior mean/variance of one real part under its interval observation."""
    edges = spec.edges
    t_lo = edges[codes]
    t_hi = edges[codes + 1]
    ss2 = 0.5 * (v + sigma2)
    ss = np.sqrt(ss2)
    alpha = (t_lo - m_part) / ss
    gamma = (t_hi - m_part) / ss
    ms, vs = trunc_std_moments(alpha, gamma)
    half_v = 0.5 * v
    mean = m_part + half_v / ss * ms
    var = half_v * (0.5 * sigma2 + half_v * vs) / ss2
    return mean, var


def quantized_posterior_moments(cavity, obs):
    """Componentwise posterior of z given interval observations of both parts."""
    if isinstance(obs.spec, IdentityQuantizer):
        y = np.asarray(obs.codes_re) + 1j * np.asarray(obs.codes_im)
        return gaussian_posterior_moments(cavity, y, obs.sigma2)
    mr, vr = _part_moments(cavity.mean.real, cavity.var, obs.sigma2, obs.codes_re, obs.spec)
    mi, vi = _part_moments(cavity.mean.imag, cavity.var, obs.sigma2, obs.codes_im, obs.spec)
    return GaussianMessage(mr + 1j * mi, vr + vi)


def gaussian_posterior_moments(cavity, y, sigma2):
    """Unquantized variant: conjugate Gaussian combine with the likelihood."""
    var = 1.0 / (1.0 / cavity.var + 1.0 / sigma2)
    mean = var * (cavity.mean / cavity.var + np.asarray(y, dtype=complex) / sigma2)
    return GaussianMessage(mean, var)


def module_c_step(cavity, obs, v_max):
    """Extrinsic message toward the linear module (diagonal EP projection)."""
    post = quantized_posterior_moments(cavity, obs)
    return extrinsic(post, cavity, v_max=v_max)
