"""Cramer-Rao bounds for the path parameters under quantized and
unquantized observations.

The parameter vector stacks [theta_1..theta_L, g_1..g_L, varphi_1..varphi_L].
Quantization enters only through per-sample information coefficients: each
real dimension contributes a factor that sums the cell information of the
quantizer over all cells, evaluated at the standardized noiseless signal.
Without a quantizer that factor is exactly 2/sigma^2 per real dimension.
"""

from dataclasses import dataclass

import numpy as np

from .gausstails import cell_information

_COND_LIMIT = 1e12


@dataclass
class FimResult:
    fim: np.ndarray
    crb: np.ndarray          # None when the FIM is numerically singular
    l: int
    singular: bool

    def _block(self, k):
        if self.crb is None:
            return None
        sl = slice(k * self.l, (k + 1) * self.l)
        return np.diag(self.crb)[sl].copy()

    @property
    def crb_theta(self):
        return self._block(0)

    @property
    def crb_g(self):
        return self._block(1)

    @property
    def crb_varphi(self):
        return self._block(2)

    def crb_db(self):
        """Diagonal bounds in dB, ordered (theta, g, varphi)."""
        if self.crb is None:
            return None
        return 10.0 * np.log10(np.diag(self.crb))


def noiseless_signal(truth, pilot):
    """M x T matrix of noiseless observations h x^T."""
    return np.outer(truth.h, pilot.x)


def z_derivatives(truth, pilot, geom):
    """Derivatives of Re{Z_it} and Im{Z_it} w.r.t. the stacked parameters.

    Returns (dre, dim), each (M, T, 3L).
    """
    m_idx = geom.indices.astype(float)[:, None]           # (M, 1)
    ang = m_idx * truth.theta[None, :] + truth.varphi[None, :]   # (M, L)
    xi = -np.cos(ang)
    zeta = np.sin(ang)
    g = truth.g[None, :]
    xr = pilot.x.real
    xi_t = pilot.x.imag
    big = len(truth.theta)

    # Common angular factors, shape (M, T, L) after broadcasting.
    def mix(a, b):
        return a[:, None, :] * xr[None, :, None] + b[:, None, :] * xi_t[None, :, None]

    dre = np.empty((geom.m, pilot.t, 3 * big))
    dim = np.empty((geom.m, pilot.t, 3 * big))
    mfac = m_idx[:, None, :]                      # (M, 1, 1), broadcast over t, l
    ang_re_theta = mix(-zeta, xi)                 # xi Im{x} - zeta Re{x}
    ang_im_theta = mix(-xi, -zeta)                # -(xi Re{x} + zeta Im{x})
    dre[:, :, :big] = mfac * g[:, None, :] * ang_re_theta
    dim[:, :, :big] = mfac * g[:, None, :] * ang_im_theta
    dre[:, :, big:2 * big] = mix(-xi, -zeta)
    dim[:, :, big:2 * big] = mix(zeta, -xi)
    dre[:, :, 2 * big:] = g[:, None, :] * ang_re_theta
    dim[:, :, 2 * big:] = g[:, None, :] * ang_im_theta
    return dre, dim


def quantized_coefficients(z, sigma2, spec):
    """Per-sample information factors (lam, chi) for Re and Im parts.

    Sums the Gaussian cell information over quantizer cells at the
    standardized signal value; the prefactor 2/sigma^2 makes the identity
    quantizer limit exact.
    """
    s = np.sqrt(sigma2 / 2.0)
    edges = spec.edges
    lo = (edges[:-1][None, None, :] - z.real[:, :, None]) / s
    hi = (edges[1:][None, None, :] - z.real[:, :, None]) / s
    lam = (2.0 / sigma2) * cell_information(lo, hi).sum(axis=-1)
    lo = (edges[:-1][None, None, :] - z.imag[:, :, None]) / s
    hi = (edges[1:][None, None, :] - z.imag[:, :, None]) / s
    chi = (2.0 / sigma2) * cell_information(lo, hi).sum(axis=-1)
    return lam, chi


def unquantized_coefficients(z, sigma2):
    full = np.full(z.shape, 2.0 / sigma2)
    return full, full.copy()


def fim(truth, pilot, geom, sigma2, spec=None):
    """Fisher information and CRB for the stacked path parameters."""
    z = noiseless_signal(truth, pilot)
    dre, dim = z_derivatives(truth, pilot, geom)
    if spec is None:
        lam, chi = unquantized_coefficients(z, sigma2)
    else:
        lam, chi = quantized_coefficients(z, sigma2, spec)
    info = (np.einsum("it,itp,itq->pq", lam, dre, dre)
            + np.einsum("it,itp,itq->pq", chi, dim, dim))
    info = 0.5 * (info + info.T)
    big = len(truth.theta)
    eig = np.linalg.eigvalsh(info)
    singular = eig[0] <= _COND_LIMIT ** -1 * max(eig[-1], 0) or eig[0] <= 0
    crb = None if singular else np.linalg.inv(info)
    return FimResult(fim=info, crb=crb, l=big, singular=bool(singular))
