"""Gridless variational line-spectral module (module A of the EP loop).

Works on the pseudo problem h_tilde = A(theta) beta + n with known
per-component noise variances v_tilde.  Weights carry a Bernoulli-Gaussian
prior (activation probability rho, variance tau); frequencies carry von Mises
beliefs whose posteriors are reduced to a single von Mises by mode matching.

Heteroscedastic weights W = 1/v_tilde enter J, u and the frequency residual
directly; averaging them into a scalar noise level degrades the EP loop badly,
so every formula below keeps the componentwise weights.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import circular_moments

_TWO_PI = 2.0 * np.pi


def _wrap(theta):
    """Wrap angles to [-pi, pi)."""
    return np.mod(theta + np.pi, _TWO_PI) - np.pi


@dataclass
class VonMisesPosterior:
    mu: float
    kappa: float

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError("kappa must be finite and >= 0")
        self.mu = float(_wrap(self.mu))


def uninformative_prior():
    return VonMisesPosterior(0.0, 0.0)


@dataclass
class SupportState:
    s: np.ndarray           # (N,) bool
    beta_hat: np.ndarray    # (|S|,) complex, ordered by component index
    c_hat: np.ndarray       # (|S|,|S|) complex posterior covariance
    rho: float
    tau: float


@dataclass
class LsePseudoProblem:
    h_tilde: np.ndarray
    v_tilde: np.ndarray
    geom: object
    priors: list = None     # N VonMisesPosterior entries; None = all uninformative

    def __post_init__(self):
        self.h_tilde = np.asarray(self.h_tilde, dtype=complex)
        self.v_tilde = np.asarray(self.v_tilde, dtype=float)
        if self.h_tilde.size != self.geom.m or self.v_tilde.size != self.geom.m:
            raise ValueError("h_tilde / v_tilde must have length M")
        if np.any(self.v_tilde <= 0):
            raise ValueError("v_tilde must be positive")


@dataclass
class ValseConfig:
    max_sweeps: int = 50
    mu_tol: float = 1e-6
    expected_paths: int = 5
    grid_min: int = 256
    newton_iters: int = 25
    check_flips: bool = True


@dataclass
class ValseState:
    """Mutable sweep state; reusable across calls for warm starts."""

    mu: np.ndarray
    kappa: np.ndarray
    ahat: np.ndarray        # (M, N) moments E[a(theta_i)]
    active: np.ndarray      # (N,) bool
    rho: float
    tau: float

    def snapshot(self):
        return ValseState(self.mu.copy(), self.kappa.copy(), self.ahat.copy(),
                          self.active.copy(), self.rho, self.tau)


@dataclass
class ValseResult:
    h_mean: np.ndarray
    h_var: np.ndarray
    support: SupportState
    posteriors: list
    l_hat: int
    converged: bool
    sweeps: int
    state: ValseState


@dataclass
class FrequencyContext:
    """Residual context for one frequency update (all quantities current)."""

    h_tilde: np.ndarray
    weights: np.ndarray
    geom: object
    active_idx: np.ndarray
    beta_hat: np.ndarray
    c_hat: np.ndarray
    ahat: np.ndarray
    prior_mu: np.ndarray
    prior_kappa: np.ndarray
    grid: int
    newton_iters: int = 25


def _grid_size(geom, cfg):
    target = max(cfg.grid_min, 8 * max(int(geom.indices[-1]), 1), 4 * geom.n_virtual)
    return 1 << (target - 1).bit_length()


def _moments_matrix(geom, mu, kappa):
    out = np.empty((geom.m, mu.size), dtype=complex)
    for i in range(mu.size):
        out[:, i] = circular_moments(mu[i], kappa[i], geom.indices)
    return out


def _refine_matched(m_idx, wr, theta, spacing, iters):
    """Newton ascent of the matched-filter power |sum_m wr_m e^{-jm theta}|^2."""
    mf = m_idx.astype(float)
    for _ in range(iters):
        e = wr * np.exp(-1j * mf * theta)
        g = e.sum()
        gp = (-1j * mf * e).sum()
        gpp = (-(mf ** 2) * e).sum()
        d1 = 2.0 * np.real(np.conj(g) * gp)
        d2 = 2.0 * (np.abs(gp) ** 2 + np.real(np.conj(g) * gpp))
        if d2 >= 0:
            break
        step = d1 / d2
        if abs(step) > spacing:
            step = math.copysign(spacing, step)
        theta -= step
        if abs(step) < 1e-13:
            break
    return theta


def _periodogram_init(problem, cfg, grid, prior_mu, prior_kappa):
    """Sequential matched-filter initialization of the frequency beliefs.

    Components with an informative prior go first, in order of decreasing
    concentration: each Newton-refines from its prior mean (so it claims the
    energy near where it was last seen), adds the prior concentration to the
    matched curvature, and subtracts its rank-one fit.  The remaining
    components then peak-pick the residual periodogram freely, so paths the
    priors do not cover can still be discovered.  Kappa comes from the
    curvature of the single-component density exp(Re{eta^H a}) with
    eta = 2 W (r beta*), so it reflects the matched energy rather than the
    grid scale.
    """
    geom = problem.geom
    n = geom.n_virtual
    idx = geom.indices
    g_len = 16 * n
    spacing = _TWO_PI / g_len
    w = 1.0 / problem.v_tilde
    sum_w = w.sum()
    r = problem.h_tilde.copy()
    mu0 = np.zeros(n)
    kappa0 = np.zeros(n)
    mf = idx.astype(float)
    informed = np.flatnonzero(prior_kappa > 0)
    order = list(informed[np.argsort(prior_kappa[informed])[::-1]])
    order += [i for i in range(n) if prior_kappa[i] <= 0]
    for i in order:
        if prior_kappa[i] > 0:
            start = float(prior_mu[i])
        else:
            buf = np.zeros(g_len, dtype=complex)
            buf[idx] = w * r
            gain = np.fft.fft(buf)          # a(theta_k)^H (W r) on the coarse grid
            start = _TWO_PI * int(np.argmax(np.abs(gain))) / g_len
        theta = _refine_matched(idx, w * r, start, spacing, cfg.newton_iters)
        steer = np.exp(1j * idx * theta)
        beta = np.vdot(steer, w * r) / sum_w
        eta = 2.0 * w * (r * np.conj(beta))
        # Curvature of Re{eta^H a(theta)} at the matched point.
        curv = (mf ** 2 * np.real(np.conj(eta) * steer)).sum()
        mu0[i] = float(_wrap(theta))
        kappa0[i] = float(prior_kappa[i]) + max(float(curv), 0.0)
        r = r - beta * steer
    return mu0, kappa0


def _mode_match(coeff, grid, newton_iters):
    """Mode and curvature matching of ln q(theta) = Re{sum_m c_m e^{jm theta}}.

    Coarse argmax on a uniform grid (one inverse FFT), then guarded Newton
    refinement using the exact trigonometric-polynomial derivatives.
    """
    ms = np.flatnonzero(coeff)
    ms = ms[ms > 0]
    if ms.size == 0:
        return 0.0, 0.0
    cs = coeff[ms]
    padded = np.zeros(grid, dtype=complex)
    padded[ms] = cs
    vals = np.real(np.fft.ifft(padded)) * grid
    k0 = int(np.argmax(vals))
    theta = _TWO_PI * k0 / grid
    spacing = _TWO_PI / grid

    msf = ms.astype(float)
    for _ in range(newton_iters):
        w = cs * np.exp(1j * msf * theta)
        d1 = -(msf * w.imag).sum()
        d2 = -(msf ** 2 * w.real).sum()
        if d2 >= 0:
            break
        step = d1 / d2
        if abs(step) > spacing:
            step = math.copysign(spacing, step)
        theta -= step
        if abs(step) < 1e-13:
            break

    w = cs * np.exp(1j * msf * theta)
    d2 = -(msf ** 2 * w.real).sum()
    kappa = max(-d2, 0.0)
    return float(_wrap(theta)), kappa


def update_frequency(i, ctx):
    """Von Mises refit of q(theta_i) from the current weighted residual."""
    pos = int(np.flatnonzero(ctx.active_idx == i)[0])
    beta_i = ctx.beta_hat[pos]
    keep = np.arange(ctx.active_idx.size) != pos
    others = ctx.active_idx[keep]
    coef = ctx.beta_hat[keep] * np.conj(beta_i) + ctx.c_hat[keep, pos]
    acc = ctx.ahat[:, others] @ coef if others.size else 0.0
    eta = 2.0 * ctx.weights * (ctx.h_tilde * np.conj(beta_i) - acc)

    n_h = max(ctx.geom.n_virtual, 2)
    coeff = np.zeros(n_h, dtype=complex)
    np.add.at(coeff, ctx.geom.indices, np.conj(eta))
    coeff[1] += ctx.prior_kappa[i] * np.exp(-1j * ctx.prior_mu[i])
    mu, kappa = _mode_match(coeff, ctx.grid, ctx.newton_iters)
    return VonMisesPosterior(mu, kappa)


def _gram_and_evidence(problem, ahat):
    """J (Hermitian, exact unit diagonal energies) and u = A^H (W h_tilde)."""
    w = 1.0 / problem.v_tilde
    j = ahat.conj().T @ (w[:, None] * ahat)
    np.fill_diagonal(j, w.sum())
    u = ahat.conj().T @ (w * problem.h_tilde)
    return j, u


def _weights_for(j, u, idx, tau):
    """Posterior (beta, C) and the support log-evidence on a candidate set."""
    s = idx.size
    if s == 0:
        return np.zeros(0, complex), np.zeros((0, 0), complex), 0.0
    js = j[np.ix_(idx, idx)] + np.eye(s) / tau
    try:
        chol = np.linalg.cholesky(js)
    except np.linalg.LinAlgError:
        js = js + np.eye(s) * (1e-10 * np.real(np.trace(js)))
        chol = np.linalg.cholesky(js)
    c = np.linalg.inv(js)
    c = 0.5 * (c + c.conj().T)
    beta = c @ u[idx]
    logdet_c = -2.0 * np.log(np.real(np.diag(chol))).sum()
    quad = np.real(np.vdot(u[idx], beta))
    return beta, c, logdet_c + quad


def _support_objective(logdet_quad, s, rho, tau):
    return logdet_quad - s * math.log(tau) + s * (math.log(rho) - math.log1p(-rho))


def update_support_and_weights(problem, state, config=None):
    """Greedy single-flip ascent on the support, with exact weight refits.

    The flip gains are the exact evidence differences (Schur-complement
    identities), so the objective is nondecreasing across flips; this is
    checked against a from-scratch recomputation at every flip.
    """
    cfg = config or ValseConfig()
    j, u = _gram_and_evidence(problem, state.ahat)
    jdiag = np.real(j[0, 0])
    n = state.active.size
    active = state.active.copy()
    rho, tau = state.rho, state.tau
    log_odds = math.log(rho) - math.log1p(-rho)

    idx = np.flatnonzero(active)
    beta, c, ldq = _weights_for(j, u, idx, tau)
    obj = _support_objective(ldq, idx.size, rho, tau)

    for _ in range(2 * n + 8):
        gains = np.full(n, -np.inf)
        if idx.size < n:
            x = j[:, idx]                      # rows J_{k,S}
            g = x @ c if idx.size else np.zeros((n, 0), complex)
            quad = np.einsum("ks,ks->k", g, x.conj()).real if idx.size else np.zeros(n)
            # Activation is only well posed while the Schur complement stays
            # positive; near-duplicate atoms drive it to zero or below.
            denom = jdiag + 1.0 / tau - quad
            cand = denom > 1e-12 * (jdiag + 1.0 / tau)
            v_all = 1.0 / np.maximum(denom, 1e-12 * (jdiag + 1.0 / tau))
            m_all = v_all * (u - (x @ beta if idx.size else 0.0))
            act_gain = np.log(v_all * (1.0 / tau)) + np.abs(m_all) ** 2 / v_all + log_odds
            inactive = ~active
            gains[inactive & cand] = act_gain[inactive & cand]
        if idx.size > 0:
            ckk = np.real(np.diag(c))
            deact = -(np.log(ckk / tau) + np.abs(beta) ** 2 / ckk + log_odds)
            gains[idx] = deact
        best = int(np.argmax(gains))
        if gains[best] <= 0:
            break
        active[best] = ~active[best]
        idx = np.flatnonzero(active)
        beta, c, ldq = _weights_for(j, u, idx, tau)
        new_obj = _support_objective(ldq, idx.size, rho, tau)
        if cfg.check_flips and new_obj < obj - 1e-6 * (1.0 + abs(obj)):
            raise RuntimeError("support flip decreased the evidence objective")
        obj = new_obj

    return SupportState(s=active, beta_hat=beta, c_hat=c, rho=rho, tau=tau), obj


def update_hyperparameters(support):
    """Point estimates of (rho, tau) from the current support and weights."""
    n = support.s.size
    n_active = int(support.s.sum())
    rho = np.clip(n_active / n, 1.0 / n, 1.0 - 1.0 / n)
    if n_active > 0:
        tau = float(np.sum(np.abs(support.beta_hat) ** 2 + np.real(np.diag(support.c_hat)))
                    / n_active)
    else:
        tau = support.tau
    return float(rho), max(tau, 1e-30)


def set_sequential_prior(posteriors, lam):
    """Damped carry-over: keep each mean direction, scale concentration by lam."""
    if not 0 < lam <= 1:
        raise ValueError("lambda must be in (0, 1]")
    return [VonMisesPosterior(p.mu, lam * p.kappa) for p in posteriors]


def _h_posterior(problem, state, beta, c):
    """Channel posterior moments given support weights and steering beliefs."""
    idx = np.flatnonzero(state.active)
    m = problem.geom.m
    if idx.size == 0:
        # Empty support: the mean is exactly zero; report the Bernoulli-Gaussian
        # prior predictive power so the EP extrinsic stays informative-but-alive.
        pred = max(state.rho * state.active.size * state.tau, 1e-30)
        return np.zeros(m, dtype=complex), np.full(m, pred)
    a_s = state.ahat[:, idx]
    bm = np.outer(beta, beta.conj()) + c
    h_mean = a_s @ beta
    t1 = np.einsum("mi,ij,mj->m", a_s, bm, a_s.conj()).real
    corr = ((1.0 - np.abs(a_s) ** 2) * np.real(np.diag(bm))[None, :]).sum(axis=1)
    h_var = t1 + corr - np.abs(h_mean) ** 2
    h_var = np.maximum(h_var, 1e-12 * problem.v_tilde)
    return h_mean, h_var


def run_valse(problem, config=None, state=None):
    """Coordinate-ascent sweeps of {support/weights, frequencies, hyperparameters}.

    Pass the previous result's state to warm-start (the EP outer loop does);
    otherwise frequencies come from the periodogram and informative priors.
    """
    cfg = config or ValseConfig()
    geom = problem.geom
    n = geom.n_virtual
    grid = _grid_size(geom, cfg)

    if problem.priors is None:
        prior_mu = np.zeros(n)
        prior_kappa = np.zeros(n)
    else:
        if len(problem.priors) != n:
            raise ValueError("need N prior entries")
        prior_mu = np.array([p.mu for p in problem.priors])
        prior_kappa = np.array([p.kappa for p in problem.priors])

    if state is None:
        mu0, kappa0 = _periodogram_init(problem, cfg, grid, prior_mu, prior_kappa)
        rho0 = 0.5 * min(1.0, cfg.expected_paths / n)
        tau0 = max(float(np.sum(np.abs(problem.h_tilde) ** 2)) / (geom.m * rho0 * n), 1e-30)
        state = ValseState(mu=mu0, kappa=kappa0, ahat=_moments_matrix(geom, mu0, kappa0),
                           active=np.zeros(n, dtype=bool), rho=rho0, tau=tau0)

    weights = 1.0 / problem.v_tilde
    best_obj = -np.inf
    best = None
    converged = False
    sweeps_done = 0
    support = SupportState(s=state.active.copy(), beta_hat=np.zeros(0, complex),
                           c_hat=np.zeros((0, 0), complex), rho=state.rho, tau=state.tau)

    for sweep in range(cfg.max_sweeps):
        sweeps_done = sweep + 1
        prev_active = state.active.copy()

        support, obj = update_support_and_weights(problem, state, cfg)
        state.active = support.s.copy()
        idx = np.flatnonzero(state.active)

        dmu_max = 0.0
        for i in idx:
            ctx = FrequencyContext(h_tilde=problem.h_tilde, weights=weights, geom=geom,
                                   active_idx=idx, beta_hat=support.beta_hat,
                                   c_hat=support.c_hat, ahat=state.ahat,
                                   prior_mu=prior_mu, prior_kappa=prior_kappa,
                                   grid=grid, newton_iters=cfg.newton_iters)
            post = update_frequency(i, ctx)
            dmu_max = max(dmu_max, abs(float(_wrap(post.mu - state.mu[i]))))
            state.mu[i] = post.mu
            state.kappa[i] = post.kappa
            state.ahat[:, i] = circular_moments(post.mu, post.kappa, geom.indices)

        state.rho, state.tau = update_hyperparameters(support)
        support = replace(support, rho=state.rho, tau=state.tau)

        if obj > best_obj:
            best_obj = obj
            best = state.snapshot()

        if np.array_equal(prev_active, state.active) and dmu_max < cfg.mu_tol:
            converged = True
            break

    if not converged and best is not None:
        state = best

    # Final weight refit so the reported posterior is coherent with the final
    # steering moments.
    j, u = _gram_and_evidence(problem, state.ahat)
    idx = np.flatnonzero(state.active)
    beta, c, _ = _weights_for(j, u, idx, state.tau)
    support = SupportState(s=state.active.copy(), beta_hat=beta, c_hat=c,
                           rho=state.rho, tau=state.tau)

    h_mean, h_var = _h_posterior(problem, state, beta, c)
    # Inactive components received no data evidence: their model posterior is
    # the prior itself, not the initialization leftovers.
    posteriors = [VonMisesPosterior(float(state.mu[i]), float(state.kappa[i]))
                  if state.active[i]
                  else VonMisesPosterior(float(prior_mu[i]), float(prior_kappa[i]))
                  for i in range(n)]
    return ValseResult(h_mean=h_mean, h_var=h_var, support=support,
                       posteriors=posteriors, l_hat=int(idx.size),
                       converged=converged, sweeps=sweeps_done, state=state)
