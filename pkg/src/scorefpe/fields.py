"""Joint geometric states and score-field objects.

A score field maps a state (x, rotations) and a time to the pair
(s_x, s_r): the coordinate score in R^D and per-residue tangent coefficient
vectors on SO(3)^N.  The finite-difference estimators in :mod:`scorefpe.fpe`
probe fields at many nearby points, so fields expose two batched entry
points in addition to plain ``eval``:

* ``eval_x(X, rots, t)``      -- many coordinate vectors, frames fixed;
* ``eval_r(x, rots, t, i, V)`` -- residue i right-perturbed by exp(hat(v))
                                  for each row v of V, everything else fixed.

The default implementations loop over ``eval``; the analytic fields below
override them with vectorized forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import igso3, r3, so3, so3_diffusion


@dataclass
class GeoState:
    """Joint noisy state: coordinates (D,), frames (N, 3, 3), time stamp."""

    x: np.ndarray
    rotations: np.ndarray
    t: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)

    @property
    def dim_x(self) -> int:
        return self.x.shape[0]

    @property
    def n_frames(self) -> int:
        return self.rotations.shape[0]

    def copy(self) -> "GeoState":
        return GeoState(self.x.copy(), self.rotations.copy(), self.t)


class ScoreField:
    """Base score field; subclasses implement eval and may batch it."""

    origin = "unspecified"

    def eval(self, x: np.ndarray, rots: np.ndarray, t: float):
        raise NotImplementedError

    def eval_x(self, xs: np.ndarray, rots: np.ndarray, t: float) -> np.ndarray:
        out = [self.eval(xi, rots, t)[0] for xi in np.atleast_2d(xs)]
        return np.stack(out)

    def eval_r(self, x: np.ndarray, rots: np.ndarray, t: float,
               residue: int, offsets: np.ndarray) -> np.ndarray:
        out = []
        for v in np.atleast_2d(offsets):
            pert = np.array(rots)
            pert[residue] = rots[residue] @ so3.exp_map(v)
            out.append(self.eval(x, pert, t)[1][residue])
        return np.stack(out)

    def eval_r_stencil(self, x: np.ndarray, rots: np.ndarray, t: float,
                       offsets: np.ndarray) -> np.ndarray:
        """(N, M, 3): score of residue i with residue i perturbed by each
        offset row, one residue at a time (others held fixed)."""
        return np.stack([self.eval_r(x, rots, t, i, offsets)
                         for i in range(len(rots))])

    def at_state(self, state: GeoState):
        return self.eval(state.x, state.rotations, state.t)


def _kernel_stencil(r0s: np.ndarray, rots: np.ndarray, offsets: np.ndarray,
                    params) -> np.ndarray:
    """Batched per-residue kernel scores for all (residue, offset) pairs."""
    steps = so3.exp_map(np.atleast_2d(offsets))          # (M, 3, 3)
    pert = rots[:, None] @ steps[None]                   # (N, M, 3, 3)
    n, m = pert.shape[:2]
    r0 = np.broadcast_to(r0s[:, None], pert.shape).reshape(-1, 3, 3)
    return igso3.score_batch(r0, pert.reshape(-1, 3, 3), params).reshape(n, m, 3)


@dataclass
class KernelScoreField(ScoreField):
    """Exact transition-kernel score for a fixed clean state (x0, r0s).

    This is the marginal score of a point-mass data distribution, so it
    satisfies the score evolution equations exactly on both manifolds.
    """

    x0: np.ndarray
    r0s: np.ndarray
    sched_x: r3.NoiseScheduleR3 | None = None
    sched_r: so3_diffusion.NoiseScheduleSO3 | None = None
    origin: str = "exact-kernel"

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.r0s = np.asarray(self.r0s, dtype=float).reshape(-1, 3, 3)

    def _score_x(self, xs: np.ndarray, t: float) -> np.ndarray:
        if self.x0.size == 0:
            return np.zeros_like(np.atleast_2d(xs))
        a, s2 = self.sched_x.kernel_params(t)
        return -(np.atleast_2d(xs) - a * self.x0) / s2

    def _rot_params(self, t: float) -> igso3.IgSo3Params:
        return self.sched_r.params_at(t)

    def eval(self, x, rots, t):
        s_x = self._score_x(x, t)[0] if self.x0.size else np.zeros(0)
        rots = np.asarray(rots, dtype=float).reshape(-1, 3, 3)
        if rots.shape[0]:
            s_r = igso3.score_batch(self.r0s, rots, self._rot_params(t))
        else:
            s_r = np.zeros((0, 3))
        return s_x, s_r

    def eval_x(self, xs, rots, t):
        return self._score_x(xs, t)

    def eval_r(self, x, rots, t, residue, offsets):
        base = rots[residue] @ so3.exp_map(np.atleast_2d(offsets))
        r0 = np.broadcast_to(self.r0s[residue], base.shape)
        return igso3.score_batch(r0, base, self._rot_params(t))


@dataclass
class MixtureScoreField(ScoreField):
    """Exact marginal score of a Gaussian mixture pushed through the VP
    kernel, optionally combined with an exact rotational kernel part."""

    mixture: r3.GaussianMixture
    sched_x: r3.NoiseScheduleR3
    r0s: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    sched_r: so3_diffusion.NoiseScheduleSO3 | None = None
    origin: str = "mixture-oracle"

    def __post_init__(self):
        self.r0s = np.asarray(self.r0s, dtype=float).reshape(-1, 3, 3)

    def eval(self, x, rots, t):
        s_x = r3.gmm_marginal_score(self.mixture, x, t, self.sched_x)
        rots = np.asarray(rots, dtype=float).reshape(-1, 3, 3)
        if rots.shape[0]:
            p = self.sched_r.params_at(t)
            s_r = igso3.score_batch(self.r0s, rots, p)
        else:
            s_r = np.zeros((0, 3))
        return s_x, s_r

    def eval_x(self, xs, rots, t):
        return r3.gmm_marginal_score(self.mixture, np.atleast_2d(xs), t, self.sched_x)

    def eval_r(self, x, rots, t, residue, offsets):
        base = rots[residue] @ so3.exp_map(np.atleast_2d(offsets))
        r0 = np.broadcast_to(self.r0s[residue], base.shape)
        return igso3.score_batch(r0, base, self.sched_r.params_at(t))


@dataclass
class ScaledField(ScoreField):
    """base field times a constant factor; the negative control for the
    residual suite (scaling breaks the nonlinear norm term)."""

    base: ScoreField
    factor: float
    origin: str = "scaled-control"

    def eval(self, x, rots, t):
        s_x, s_r = self.base.eval(x, rots, t)
        return self.factor * s_x, self.factor * s_r

    def eval_x(self, xs, rots, t):
        return self.factor * self.base.eval_x(xs, rots, t)

    def eval_r(self, x, rots, t, residue, offsets):
        return self.factor * self.base.eval_r(x, rots, t, residue, offsets)


class SyntheticTimeField(ScoreField):
    """State-independent field polynomial in t; test fixture for the
    temporal finite difference (central FD is exact through quadratics)."""

    origin = "synthetic"

    def __init__(self, coeffs_x: np.ndarray, coeffs_r: np.ndarray):
        # coeffs shape (3, D) / (3, N, 3): constant, linear, quadratic in t.
        self.coeffs_x = np.asarray(coeffs_x, dtype=float)
        self.coeffs_r = np.asarray(coeffs_r, dtype=float)

    def eval(self, x, rots, t):
        c = self.coeffs_x
        cr = self.coeffs_r
        s_x = c[0] + c[1] * t + c[2] * t * t
        s_r = cr[0] + cr[1] * t + cr[2] * t * t
        return s_x, s_r

    def time_derivative(self, t: float):
        return (self.coeffs_x[1] + 2 * self.coeffs_x[2] * t,
                self.coeffs_r[1] + 2 * self.coeffs_r[2] * t)
