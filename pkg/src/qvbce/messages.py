"""Diagonal complex-Gaussian message algebra with EP guards.

Messages carry per-component circular complex variances.  Extrinsic division
can produce nonpositive precisions; those components are clamped to an
uninformative message centered at the posterior mean.
"""

from dataclasses import dataclass

import numpy as np

V_MAX_DEFAULT = 1e8
EPS_PRECISION = 1e-12


@dataclass
class GaussianMessage:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=complex))
        self.var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if self.mean.shape != self.var.shape:
            raise ValueError("mean/var shape mismatch")
        if not np.all(np.isfinite(self.var)) or np.any(self.var <= 0):
            raise ValueError("variances must be positive and finite")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("means must be finite")

    def __len__(self):
        return self.mean.size

    def copy(self):
        return GaussianMessage(self.mean.copy(), self.var.copy())


def flat(n, v_max=V_MAX_DEFAULT):
    """Uninformative message: zero mean, V_MAX variance."""
    return GaussianMessage(np.zeros(n, dtype=complex), np.full(n, v_max))


def combine(a, b):
    """Product of two diagonal Gaussians: precisions add."""
    if len(a) != len(b):
        raise ValueError("length mismatch")
    prec = 1.0 / a.var + 1.0 / b.var
    var = 1.0 / prec
    mean = var * (a.mean / a.var + b.mean / b.var)
    return GaussianMessage(mean, var)


def extrinsic(post, cavity, v_max=V_MAX_DEFAULT, eps=EPS_PRECISION):
    """Divide posterior by cavity componentwise.

    Components whose precision difference is <= eps (posterior no more certain
    than the cavity) are clamped to (m_post, v_max); variances are capped at
    v_max throughout.
    """
    if len(post) != len(cavity):
        raise ValueError("length mismatch")
    post_prec = 1.0 / post.var
    cav_prec = 1.0 / cavity.var
    dprec = post_prec - cav_prec
    ok = dprec > eps
    safe = np.where(ok, dprec, 1.0)
    var = np.where(ok, np.minimum(1.0 / safe, v_max), v_max)
    mean = np.where(ok, var * (post.mean * post_prec - cavity.mean * cav_prec), post.mean)
    return GaussianMessage(mean, var)


def damp(new, old, factor):
    """Convex blend in natural (precision, precision-weighted-mean) space."""
    if factor >= 1.0:
        return new
    eta = factor / new.var + (1.0 - factor) / old.var
    gamma = factor * new.mean / new.var + (1.0 - factor) * old.mean / old.var
    var = 1.0 / eta
    return GaussianMessage(var * gamma, var)
