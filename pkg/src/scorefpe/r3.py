"""Translational variance-preserving diffusion: linear noise schedule, exact
Gaussian transition kernel, analytic mixture marginal scores, and the
reverse-time Euler-Maruyama update.

Forward SDE: dX = -1/2 beta(t) X dt + sqrt(beta(t)) dW with the linear
schedule beta(t) = beta_min + t (beta_max - beta_min).  The transition
kernel is N(alpha(t) x0, sigma2(t) I) with alpha = exp(-integral(beta)/2)
and sigma2 = 1 - alpha^2; at t = 1 the marginal is the standard normal
prior for the default endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class NoiseScheduleR3:
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_eps: float = 1e-3

    def __post_init__(self):
        if not (0 < self.beta_min < self.beta_max):
            raise ValueError("need 0 < beta_min < beta_max")
        if not (0 < self.t_eps < 0.5):
            raise ValueError("t_eps must lie in (0, 0.5)")

    def beta(self, t):
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def beta_bar(self, t):
        """Integral of beta over [0, t], closed form for the linear schedule."""
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def alpha(self, t):
        return np.exp(-0.5 * self.beta_bar(t))

    def sigma2(self, t):
        a = self.alpha(t)
        return 1.0 - a * a

    def kernel_params(self, t):
        """(alpha(t), sigma2(t)) of the Gaussian transition kernel."""
        a = self.alpha(t)
        return a, 1.0 - a * a

    def clamp_t(self, t):
        return float(np.clip(t, self.t_eps, 1.0))


def forward_sample(x0: np.ndarray, t: float, sched: NoiseScheduleR3,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw x_t = alpha(t) x0 + sigma(t) z from the transition kernel.

    Accepts (D,) or a batch (M, D); one independent draw per row.
    """
    x0 = np.asarray(x0, dtype=float)
    a, s2 = sched.kernel_params(t)
    return a * x0 + np.sqrt(s2) * rng.standard_normal(x0.shape)


def exact_kernel_score(x0: np.ndarray, xt: np.ndarray, t: float,
                       sched: NoiseScheduleR3) -> np.ndarray:
    """Score of the transition kernel, -(xt - alpha x0) / sigma2.

    Rejects t = 0 where the kernel degenerates to a point mass.
    """
    if t <= 0.0:
        raise ValueError("kernel score undefined at t = 0 (sigma2 = 0)")
    a, s2 = sched.kernel_params(t)
    return -(np.asarray(xt, dtype=float) - a * np.asarray(x0, dtype=float)) / s2


def kernel_score_time_deriv(x0: np.ndarray, xt: np.ndarray, t: float,
                            sched: NoiseScheduleR3) -> np.ndarray:
    """Analytic d/dt of the kernel score at fixed (x0, xt); test oracle."""
    a, s2 = sched.kernel_params(t)
    beta = sched.beta(t)
    da = -0.5 * beta * a
    ds2 = beta * a * a
    xt = np.asarray(xt, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    return (da * x0 * s2 + (xt - a * x0) * ds2) / (s2 * s2)


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of Gaussians used as analytic ground-truth data distribution.

    covs holds one full covariance per component, shape (K, D, D).
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("weights must be a probability vector")
        if self.means.shape[0] != w.shape[0] or self.covs.shape[0] != w.shape[0]:
            raise ValueError("component count mismatch")

    @classmethod
    def spherical(cls, weights, means, variances) -> "GaussianMixture":
        means = np.asarray(means, dtype=float)
        d = means.shape[1]
        covs = np.stack([v * np.eye(d) for v in np.asarray(variances, dtype=float)])
        return cls(np.asarray(weights, dtype=float), means, covs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        ks = rng.choice(len(self.weights), size=n, p=self.weights)
        chols = np.linalg.cholesky(self.covs + 1e-12 * np.eye(self.dim))
        z = rng.standard_normal((n, self.dim))
        return self.means[ks] + np.einsum("nij,nj->ni", chols[ks], z)

    def pushforward(self, t: float, sched: NoiseScheduleR3) -> "GaussianMixture":
        """Marginal at time t: each component stays Gaussian with mean
        alpha mu and covariance alpha^2 Sigma + sigma2 I."""
        a, s2 = sched.kernel_params(t)
        covs = a * a * self.covs + s2 * np.eye(self.dim)
        return GaussianMixture(self.weights, a * self.means, covs)

    def log_density_and_score(self, x: np.ndarray):
        """(log p(x), grad log p(x)) for a batch (M, D) or single (D,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = len(self.weights)
        d = self.dim
        precs = np.linalg.inv(self.covs)
        _, logdets = np.linalg.slogdet(self.covs)
        diffs = x[:, None, :] - self.means[None, :, :]          # (M, K, D)
        mahal = np.einsum("mkd,kde,mke->mk", diffs, precs, diffs)
        logcomp = (np.log(self.weights)[None, :] - 0.5 * mahal
                   - 0.5 * (logdets[None, :] + d * np.log(2 * np.pi)))
        logp = logsumexp(logcomp, axis=1)
        resp = np.exp(logcomp - logp[:, None])                   # (M, K)
        comp_scores = -np.einsum("kde,mke->mkd", precs, diffs)   # (M, K, D)
        score = np.einsum("mk,mkd->md", resp, comp_scores)
        return logp, score


def gmm_marginal_score(mixture: GaussianMixture, xt: np.ndarray, t: float,
                       sched: NoiseScheduleR3) -> np.ndarray:
    """Exact grad log p_t(xt) of the mixture pushed through the kernel."""
    pushed = mixture.pushforward(t, sched)
    _, score = pushed.log_density_and_score(xt)
    return score[0] if np.ndim(xt) == 1 else score


def reverse_em_step(xt: np.ndarray, t: float, tau: float, score_fn,
                    sched: NoiseScheduleR3, rng: np.random.Generator,
                    deterministic: bool = False) -> np.ndarray:
    """One Euler-Maruyama step of the reverse-time SDE, t -> t - tau.

    score_fn(x, t) -> score array matching x.  With deterministic=True the
    probability-flow drift (half the score term) is used and no noise added.
    """
    if t - tau < -1e-12:
        raise ValueError("step would cross t = 0")
    xt = np.asarray(xt, dtype=float)
    beta = sched.beta(t)
    s = np.asarray(score_fn(xt, t), dtype=float)
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("score_fn returned non-finite values")
    if deterministic:
        drift = 0.5 * beta * xt + 0.5 * beta * s
        return xt + drift * tau
    drift = 0.5 * beta * xt + beta * s
    noise = np.sqrt(beta * tau) * rng.standard_normal(xt.shape)
    return xt + drift * tau + noise
