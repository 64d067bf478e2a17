"""Linear MMSE module: Gaussian inference through z = (x kron I_M) h with
heteroscedastic pseudo-noise.

The Kronecker pilot structure makes the posterior covariance diagonal, so the
nominal O((MT)^3) inversions collapse to O(MT) componentwise updates: pilot t
contributes |x_t|^2 / s2[t,m] precision and x_t^* z[t,m] / s2[t,m] evidence to
antenna m.  A dense-matrix path is kept for testing and non-Kronecker use.
"""

from dataclasses import dataclass

import numpy as np

from .messages import GaussianMessage, extrinsic


@dataclass
class PseudoLinearModel:
    """Pseudo observations z_tilde = (x kron I_M) h + noise, componentwise variances."""

    pilot: object
    z_tilde: np.ndarray
    sigma_w2_tilde: np.ndarray

    def __post_init__(self):
        self.z_tilde = np.asarray(self.z_tilde, dtype=complex)
        self.sigma_w2_tilde = np.asarray(self.sigma_w2_tilde, dtype=float)
        if self.z_tilde.size != self.sigma_w2_tilde.size:
            raise ValueError("z_tilde / variance length mismatch")
        if self.z_tilde.size % self.pilot.t != 0:
            raise ValueError("length must be M*T")
        if np.any(self.sigma_w2_tilde <= 0):
            raise ValueError("pseudo-noise variances must be positive")

    @property
    def m(self):
        return self.z_tilde.size // self.pilot.t


def h_posterior(model, prior_h):
    """Posterior mean/variance of h; closed diagonal form under x kron I_M."""
    t = model.pilot.t
    m = model.m
    if len(prior_h) != m:
        raise ValueError("prior length mismatch")
    x = model.pilot.x
    z = model.z_tilde.reshape(t, m)
    s2 = model.sigma_w2_tilde.reshape(t, m)
    prec = (np.abs(x[:, None]) ** 2 / s2).sum(axis=0) + 1.0 / prior_h.var
    lin = (np.conj(x[:, None]) * z / s2).sum(axis=0) + prior_h.mean / prior_h.var
    var = 1.0 / prec
    return var * lin, var


def module_b_to_h(model, prior_h, v_max):
    """Extrinsic toward the line-spectral module: posterior divided by its prior."""
    mean, var = h_posterior(model, prior_h)
    return extrinsic(GaussianMessage(mean, var), prior_h, v_max=v_max)


def z_posterior(model, prior_h_new):
    """Posterior over z = (x kron I_M) h with the refreshed h prior."""
    h_mean, h_var = h_posterior(model, prior_h_new)
    x = model.pilot.x
    z_mean = np.kron(x, h_mean)
    z_var = np.kron(np.abs(x) ** 2, h_var)
    return GaussianMessage(z_mean, z_var)


def z_posterior_and_extrinsic(model, prior_h_new, cavity_z, v_max):
    """Closes the loop: new z posterior divided by the chosen z cavity."""
    post = z_posterior(model, prior_h_new)
    return extrinsic(post, cavity_z, v_max=v_max)


def _phi_matrix(pilot, m):
    return np.kron(pilot.x[:, None], np.eye(m))


def h_posterior_dense(model, prior_h):
    """Dense-matrix evaluation of the same posterior (test oracle path)."""
    m = model.m
    phi = _phi_matrix(model.pilot, m)
    d = np.diag(1.0 / model.sigma_w2_tilde)
    cov = np.linalg.inv(phi.conj().T @ d @ phi + np.diag(1.0 / prior_h.var))
    mean = cov @ (phi.conj().T @ d @ model.z_tilde + prior_h.mean / prior_h.var)
    return mean, np.real(np.diag(cov))


def z_posterior_dense(model, prior_h_new):
    """Dense evaluation of the z posterior diagonal (test oracle path)."""
    m = model.m
    phi = _phi_matrix(model.pilot, m)
    d = np.diag(1.0 / model.sigma_w2_tilde)
    cov = np.linalg.inv(phi.conj().T @ d @ phi + np.diag(1.0 / prior_h_new.var))
    mean = cov @ (phi.conj().T @ d @ model.z_tilde + prior_h_new.mean / prior_h_new.var)
    zcov = phi @ cov @ phi.conj().T
    return phi @ mean, np.real(np.diag(zcov))
