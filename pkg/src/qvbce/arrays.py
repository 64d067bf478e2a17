"""Array geometry, channel synthesis, and circular moments of steering vectors.

The array is a (possibly sparse) linear array whose element positions are an
integer subset of a virtual aperture {0, ..., N-1}.  All inference runs in the
spatial-frequency domain theta = pi*sin(doa) in [-pi, pi).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ive


@dataclass(frozen=True)
class ArrayGeometry:
    """Element index set M = {m_1 < ... < m_M} inside a virtual aperture of size N."""

    indices: np.ndarray
    n_virtual: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("indices must be a nonempty 1-d integer array")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] > self.n_virtual - 1:
            raise ValueError("indices must lie in {0..N-1}")

    @property
    def m(self):
        return self.indices.size


def full_ula(m):
    """Contiguous uniform linear array: M = N = m."""
    return ArrayGeometry(indices=np.arange(m), n_virtual=m)


def doa_to_freq(phi):
    """theta = pi*sin(phi); phi in radians."""
    return np.pi * np.sin(phi)


def freq_to_doa(theta):
    return np.arcsin(np.asarray(theta) / np.pi)


def steering_vector(geom, theta):
    """a(theta) with components e^{j m_i theta}; unit modulus everywhere."""
    return np.exp(1j * geom.indices * theta)


def steering_matrix(geom, thetas):
    """M x K matrix whose columns are a(theta_k)."""
    thetas = np.atleast_1d(thetas)
    return np.exp(1j * np.outer(geom.indices, thetas))


@dataclass
class GroundTruthChannel:
    """L-path channel h = sum_l g_l e^{j varphi_l} a(theta_l)."""

    theta: np.ndarray
    g: np.ndarray
    varphi: np.ndarray
    beta: np.ndarray = field(default=None)
    h: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        self.varphi = np.atleast_1d(np.asarray(self.varphi, dtype=float))
        if not (self.theta.size == self.g.size == self.varphi.size):
            raise ValueError("theta, g, varphi must share length L")
        if np.any(self.g < 0):
            raise ValueError("gains must be nonnegative")
        if self.beta is None:
            self.beta = self.g * np.exp(1j * self.varphi)

    @property
    def n_paths(self):
        return self.theta.size


def synthesize_channel(geom, truth):
    """h = sum_l beta_l a(theta_l); also stored into truth.h."""
    a = steering_matrix(geom, truth.theta)
    truth.h = a @ truth.beta
    return truth.h


@dataclass
class PilotBlock:
    """T known pilot symbols; the stacked measurement operator is x kron I_M."""

    x: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=complex))
        if self.x.size < 1 or np.any(np.abs(self.x) == 0):
            raise ValueError("pilots must be nonempty with |x_t| > 0")

    @property
    def t(self):
        return self.x.size


def synthesize_observation(truth, pilot, sigma2, rng):
    """Noisy unquantized observation vec(h x^T) + w, w ~ CN(0, sigma2 I).

    Component order is pilot-major: entry t*M + i is antenna i at pilot t.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    h = truth.h if truth.h is not None else None
    if h is None:
        raise ValueError("truth.h not synthesized")
    z = np.kron(pilot.x, h)
    n = z.size
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(sigma2 / 2.0)
    return z + w


_IVE_MAX_ARG = 1e8


def bessel_ratio(orders, kappa):
    """I_|m|(kappa) / I_0(kappa), overflow-free via exponentially scaled Bessels.

    The Amos routines behind scipy's ive signal overflow for arguments beyond
    about 1e9 and return NaN, so very concentrated beliefs switch to the
    asymptotic ratio exp(-m^2/(2k) - m^2/(4k^2)), whose truncation error is
    O(m^6/k^3) (< 1e-10 over the switch region for the apertures used here).
    """
    orders = np.abs(np.asarray(orders))
    if kappa < 0:
        raise ValueError("concentration must be >= 0")
    if kappa == 0.0:
        return np.where(orders == 0, 1.0, 0.0).astype(float)
    if kappa <= _IVE_MAX_ARG:
        return ive(orders, kappa) / ive(0, kappa)
    m2 = orders.astype(float) ** 2
    return np.exp(-m2 / (2.0 * kappa) - m2 / (4.0 * kappa ** 2))


def circular_moment(post, m):
    """E[e^{j m theta}] under a von Mises law = (I_|m|(k)/I_0(k)) e^{j m mu}."""
    r = bessel_ratio(m, post.kappa)
    return r * np.exp(1j * m * post.mu)


def circular_moments(mu, kappa, orders):
    """Vector of E[e^{j m theta}] for all orders at once (one belief)."""
    r = bessel_ratio(orders, kappa)
    return r * np.exp(1j * np.asarray(orders) * mu)
