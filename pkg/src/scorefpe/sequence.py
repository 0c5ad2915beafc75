"""Discrete sequence diffusion: a uniform-target CTMC over amino-acid types,
its exact reverse-rate construction, and the tau-leaping reverse sampler.

Forward kernel (per position, independent): with probability
exp(-beta_bar(t)) the type survives, otherwise it is resampled uniformly
over the alphabet.  This is the marginal of the CTMC whose generator jumps
at rate beta(t) to a uniformly chosen type (self-jumps included), so

    q_{t|0}(s | a0) = e^{-bb} 1[s == a0] + (1 - e^{-bb}) / K.

Reverse rates follow the exact time-reversal identity

    rate(a_t -> s) = Q(s -> a_t) * sum_a0 post(a0) q_{t|0}(s|a0) / q_{t|0}(a_t|a0)

with Q(s -> a_t) = beta(t)/K for the uniform kernel; plugging in the exact
posterior makes the ratio equal q_t(s)/q_t(a_t), reproducing the forward
marginals, which the two-state enumeration oracle checks end to end.

The alphabet size is parameterized (restricted chains are used by the
verification suite); production use is the 20-letter amino-acid alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
N_TYPES = len(AMINO_ACIDS)


@dataclass(frozen=True)
class SeqSchedule:
    """Linear jump-rate schedule, same shape as the coordinate schedule."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    n_types: int = N_TYPES

    def __post_init__(self):
        if not (0 < self.beta_min < self.beta_max):
            raise ValueError("need 0 < beta_min < beta_max")
        if self.n_types < 2:
            raise ValueError("need at least two types")

    def beta(self, t):
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def beta_bar(self, t):
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def keep_probability(self, t):
        """Probability that no resampling event occurred by time t."""
        return np.exp(-self.beta_bar(t))

    def stay_probability(self, t):
        """P(A_t = a0): keep plus the uniform resample landing back."""
        k = self.keep_probability(t)
        return k + (1.0 - k) / self.n_types

    def kernel_row(self, a0: int, t: float) -> np.ndarray:
        """q_{t|0}(. | a0) as a length-K probability vector."""
        k = self.keep_probability(t)
        row = np.full(self.n_types, (1.0 - k) / self.n_types)
        row[a0] += k
        return row


@dataclass
class SeqState:
    """Categorical sequence over the alphabet with its diffusion time."""

    types: np.ndarray
    t: float

    def __post_init__(self):
        self.types = np.asarray(self.types, dtype=int)

    def to_string(self) -> str:
        return "".join(AMINO_ACIDS[i] for i in self.types)

    @classmethod
    def from_string(cls, s: str, t: float = 0.0) -> "SeqState":
        return cls(np.array([AMINO_ACIDS.index(c) for c in s]), t)


@dataclass
class SeqRates:
    """Nonnegative reverse transition rates, diagonal treated as zero."""

    rates: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("rates must be finite and nonnegative")


def forward_corrupt(a0: np.ndarray, t: float, sched: SeqSchedule,
                    rng: np.random.Generator) -> SeqState:
    """Corrupt each position independently via the closed-form kernel."""
    a0 = np.asarray(a0, dtype=int)
    keep = rng.random(a0.shape) < sched.keep_probability(t)
    resampled = rng.integers(0, sched.n_types, size=a0.shape)
    return SeqState(np.where(keep, a0, resampled), t)


def reverse_rates(clean_posterior: np.ndarray, a_t: np.ndarray, t: float,
                  sched: SeqSchedule, rate_max: float = 1e4) -> SeqRates:
    """Posterior-weighted reverse rates for every position and target type.

    clean_posterior has shape (N, K) with rows summing to 1; a_t holds the
    current types.  Rates toward the current type are zero; everything is
    clamped to [0, rate_max] to keep tau-leaping well conditioned near t=0.
    """
    post = np.asarray(clean_posterior, dtype=float)
    a_t = np.asarray(a_t, dtype=int)
    k_types = sched.n_types
    if post.ndim != 2 or post.shape[1] != k_types:
        raise ValueError(f"posterior must be (N, {k_types})")
    if np.any(post < -1e-12) or np.any(np.abs(post.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("posterior rows must be probability vectors")

    keep = sched.keep_probability(t)
    uni = (1.0 - keep) / k_types
    # q_{t|0}(s | a0) = uni + keep * 1[s == a0]; the target sum splits into a
    # uniform part and the a0 = s term:
    # ratio[d, s] = sum_a0 post[d, a0] q(s|a0) / q(a_t[d]|a0)
    #            = uni * sum_a0 post/q(a_t|a0) + keep * post[s]/q(a_t|s).
    q_at = uni + keep * (np.arange(k_types)[None, :] == a_t[:, None])  # over a0
    w = post / q_at                      # posterior / q(a_t | a0), per a0
    wsum = w.sum(axis=1)                 # (N,)
    ratio = uni * wsum[:, None] + keep * w   # (N, K) over target s
    rates = sched.beta(t) / k_types * ratio
    np.put_along_axis(rates, a_t[:, None], 0.0, axis=1)
    return SeqRates(np.clip(rates, 0.0, rate_max))


def tau_leap_step(a_t: np.ndarray, rates: SeqRates, tau: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One tau-leaping step: Poisson event counts per (position, target).

    If exactly one target fires the position adopts it; with multiple
    simultaneous events the largest count wins, ties broken by the larger
    rate and then the lowest type index; no event keeps the current type.
    The rule keeps states on the simplex for any tau.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    a_t = np.asarray(a_t, dtype=int)
    r = rates.rates
    counts = rng.poisson(tau * r)
    out = a_t.copy()
    fired = counts > 0
    n_fired = fired.sum(axis=1)
    single = n_fired == 1
    if np.any(single):
        out[single] = np.argmax(fired[single], axis=1)
    multi = np.nonzero(n_fired > 1)[0]
    for d in multi:
        c = counts[d]
        best = np.nonzero(c == c.max())[0]
        if len(best) > 1:
            rr = r[d, best]
            best = best[rr == rr.max()]
        out[d] = int(best[0])
    return out


def ce_loss(clean_posterior: np.ndarray, a0: np.ndarray) -> float:
    """Mean negative log posterior probability of the true types."""
    post = np.asarray(clean_posterior, dtype=float)
    a0 = np.asarray(a0, dtype=int)
    picked = np.take_along_axis(post, a0[:, None], axis=1)[:, 0]
    with np.errstate(divide="ignore"):
        return float(np.mean(-np.log(picked)))
