"""Small parameterized denoiser predicting the clean state from a noisy one,
plus the bridge turning its predictions into score fields.

Architecture: one shared two-layer tanh perceptron applied per residue to
[coords | frame tangent coords | sinusoidal time embedding | context].
Output heads are zero-initialized residual corrections, so a fresh model is
the identity denoiser: X0 = Xt, R0 = Rt, uniform sequence posterior.  The
rotation head predicts a tangent correction v and sets R0 = Rt exp(hat(v)),
which keeps predictions on the manifold without projection.

Scores are implied analytically by the transition kernels:

    s_x = -(Xt - alpha(t) X0) / sigma2(t)
    s_r = score of the rotation kernel at (R0^T Rt, sigma_r2(t))
        = -h(|v|) v   in the tangent space at Rt,

so a perfect prediction reproduces the exact kernel scores.  For residual
evaluation the prediction is frozen at the base state: spatial probes only
re-evaluate the analytic kernel-score formulas, while temporal probes
re-query the network at t +/- dt (two extra forward passes, nothing more).

Fidelity losses carry exact analytic gradients, validated against central
finite differences by the test suite.  The rotation loss compares the
exponentials of true and predicted tangent scores under the Frobenius norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import igso3, so3
from .fields import GeoState, ScoreField
from .r3 import NoiseScheduleR3
from .so3_diffusion import NoiseScheduleSO3

_RHO_TINY = 1e-6


@dataclass(frozen=True)
class DenoiserConfig:
    n_residues: int
    hidden: int = 16
    t_embed: int = 4
    ctx_dim: int = 2
    n_types: int = 20
    init_seed: int = 0

    @property
    def n_features(self) -> int:
        return 6 + self.t_embed + self.ctx_dim

    @property
    def n_outputs(self) -> int:
        return 6 + self.n_types

    @property
    def n_params(self) -> int:
        f, h, o = self.n_features, self.hidden, self.n_outputs
        return f * h + h + h * o + o

    def to_dict(self) -> dict:
        return {"n_residues": self.n_residues, "hidden": self.hidden,
                "t_embed": self.t_embed, "ctx_dim": self.ctx_dim,
                "n_types": self.n_types, "init_seed": self.init_seed}


def time_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal features [sin(2pi f t), cos(2pi f t)] for f = 1, 2, ..."""
    freqs = np.arange(1, dim // 2 + 1)
    ang = 2.0 * np.pi * freqs * t
    return np.concatenate([np.sin(ang), np.cos(ang)])


@dataclass
class ModelOutput:
    x0_pred: np.ndarray        # (3N,)
    r0s_pred: np.ndarray       # (N, 3, 3)
    v: np.ndarray              # (N, 3) tangent corrections
    logits: np.ndarray         # (N, K)
    posterior: np.ndarray      # (N, K)
    feats: np.ndarray          # (N, F) cached for backprop
    hidden: np.ndarray         # (N, H) tanh activations


class ToyDenoiser:
    """Shared per-residue MLP denoiser over a flat parameter vector."""

    def __init__(self, cfg: DenoiserConfig):
        self.cfg = cfg
        self.forward_calls = 0

    def init_params(self) -> np.ndarray:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.init_seed)
        w1 = rng.standard_normal((cfg.n_features, cfg.hidden)) / np.sqrt(cfg.n_features)
        b1 = np.zeros(cfg.hidden)
        # Zero output heads: the fresh model is the identity denoiser.
        w2 = np.zeros((cfg.hidden, cfg.n_outputs))
        b2 = np.zeros(cfg.n_outputs)
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def unpack(self, params: np.ndarray):
        cfg = self.cfg
        f, h, o = cfg.n_features, cfg.hidden, cfg.n_outputs
        i = 0
        w1 = params[i:i + f * h].reshape(f, h); i += f * h
        b1 = params[i:i + h]; i += h
        w2 = params[i:i + h * o].reshape(h, o); i += h * o
        b2 = params[i:i + o]
        return w1, b1, w2, b2

    def forward(self, params: np.ndarray, x: np.ndarray, rots: np.ndarray,
                t: float, ctx: np.ndarray, count: bool = True) -> ModelOutput:
        cfg = self.cfg
        if count:
            self.forward_calls += 1
        rots = np.asarray(rots, dtype=float).reshape(-1, 3, 3)
        n = rots.shape[0]
        coords = np.asarray(x, dtype=float).reshape(n, 3)
        tang = so3.log_map_batch(rots)
        temb = np.broadcast_to(time_embedding(t, cfg.t_embed), (n, cfg.t_embed))
        ctxf = np.broadcast_to(np.asarray(ctx, dtype=float), (n, cfg.ctx_dim))
        feats = np.concatenate([coords, tang, temb, ctxf], axis=1)

        w1, b1, w2, b2 = self.unpack(params)
        hidden = np.tanh(feats @ w1 + b1)
        out = hidden @ w2 + b2

        dx = out[:, :3]
        v = out[:, 3:6]
        logits = out[:, 6:]
        x0_pred = (coords + dx).ravel()
        r0s_pred = rots @ so3.exp_map(v)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expl = np.exp(shifted)
        posterior = expl / expl.sum(axis=1, keepdims=True)
        return ModelOutput(x0_pred, r0s_pred, v, logits, posterior, feats, hidden)

    def predict_clean(self, params, state: GeoState, ctx) -> tuple[np.ndarray, np.ndarray]:
        out = self.forward(params, state.x, state.rotations, state.t, ctx)
        return out.x0_pred, out.r0s_pred

    def implied_score(self, params, state: GeoState, ctx,
                      sched_x: NoiseScheduleR3, sched_r: NoiseScheduleSO3):
        """Kernel scores implied by the denoising prediction at the state."""
        t = state.t
        if t < min(sched_x.t_eps, sched_r.t_eps):
            raise ValueError("implied score undefined below t_eps")
        out = self.forward(params, state.x, state.rotations, t, ctx)
        a, s2 = sched_x.kernel_params(t)
        s_x = -(state.x - a * out.x0_pred) / s2
        p = igso3.IgSo3Params.from_sigma2(sched_r.sigma2_of_t(t))
        s_r = igso3.score_batch(out.r0s_pred, state.rotations, p)
        return s_x, s_r

    # -- checkpoint format: JSON header line, then one parameter per line --

    def save_params(self, params: np.ndarray, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"arch": self.cfg.to_dict(),
                                 "n_params": int(params.size)}) + "\n")
            for p in params:
                fh.write(f"{float(p):.17g}\n")

    @staticmethod
    def load_params(path) -> tuple["ToyDenoiser", np.ndarray]:
        with open(path) as fh:
            header = json.loads(fh.readline())
            vals = np.array([float(line) for line in fh])
        cfg = DenoiserConfig(**header["arch"])
        if vals.size != header["n_params"] or vals.size != cfg.n_params:
            raise ValueError("checkpoint parameter count mismatch")
        return ToyDenoiser(cfg), vals


class FrozenPredictionField(ScoreField):
    """Model-implied score field around one base state.

    The network is queried once per distinct time (the base prediction plus
    the two temporal probes); every spatial probe reuses the frozen clean
    prediction and only re-evaluates the analytic kernel-score formulas.
    """

    origin = "model-implied"

    def __init__(self, model: ToyDenoiser, params: np.ndarray, base: GeoState,
                 ctx: np.ndarray, sched_x: NoiseScheduleR3,
                 sched_r: NoiseScheduleSO3, count: bool = True):
        self.model = model
        self.params = params
        self.base = base
        self.ctx = ctx
        self.sched_x = sched_x
        self.sched_r = sched_r
        self.count = count
        self._cache: dict[float, ModelOutput] = {}

    def _pred(self, t: float) -> ModelOutput:
        out = self._cache.get(t)
        if out is None:
            out = self.model.forward(self.params, self.base.x,
                                     self.base.rotations, t, self.ctx,
                                     count=self.count)
            self._cache[t] = out
        return out

    def seed_cache(self, t: float, out: ModelOutput) -> None:
        self._cache[t] = out

    def _rot_params(self, t: float) -> igso3.IgSo3Params:
        return igso3.IgSo3Params.from_sigma2(self.sched_r.sigma2_of_t(t))

    def eval(self, x, rots, t):
        pred = self._pred(t)
        a, s2 = self.sched_x.kernel_params(t)
        s_x = -(np.asarray(x, dtype=float) - a * pred.x0_pred) / s2
        rots = np.asarray(rots, dtype=float).reshape(-1, 3, 3)
        if rots.shape[0]:
            s_r = igso3.score_batch(pred.r0s_pred, rots, self._rot_params(t))
        else:
            s_r = np.zeros((0, 3))
        return s_x, s_r

    def eval_x(self, xs, rots, t):
        pred = self._pred(t)
        a, s2 = self.sched_x.kernel_params(t)
        return -(np.atleast_2d(xs) - a * pred.x0_pred) / s2

    def eval_r(self, x, rots, t, residue, offsets):
        pred = self._pred(t)
        base = rots[residue] @ so3.exp_map(np.atleast_2d(offsets))
        r0 = np.broadcast_to(pred.r0s_pred[residue], base.shape)
        return igso3.score_batch(r0, base, self._rot_params(t))


# ---------------------------------------------------------------------------
# Rodrigues differential, needed by the rotation fidelity gradient.

def _rodrigues_coeffs(rho: float):
    if rho < 1e-4:
        r2 = rho * rho
        return (1.0 - r2 / 6.0, 0.5 - r2 / 24.0,
                -1.0 / 3.0 + r2 / 30.0, -1.0 / 12.0 + r2 / 180.0)
    a = np.sin(rho) / rho
    b = (1.0 - np.cos(rho)) / rho ** 2
    ap = (rho * np.cos(rho) - np.sin(rho)) / rho ** 3
    bp = (rho * np.sin(rho) - 2.0 * (1.0 - np.cos(rho))) / rho ** 4
    return a, b, ap, bp


def rodrigues_jacobian(s: np.ndarray) -> np.ndarray:
    """d exp_map(s) / d s_k as a (3, 3, 3) tensor, T[k] = dM/ds_k."""
    s = np.asarray(s, dtype=float)
    rho = float(np.linalg.norm(s))
    a, b, ap, bp = _rodrigues_coeffs(rho)
    k = so3.hat(s)
    k2 = k @ k
    basis = so3.basis()
    out = np.empty((3, 3, 3))
    for i in range(3):
        e = basis[i]
        out[i] = ap * s[i] * k + a * e + bp * s[i] * k2 + b * (e @ k + k @ e)
    return out


def _score_pred_jacobian(v: np.ndarray, p: igso3.IgSo3Params) -> np.ndarray:
    """d s_pred / d v for s_pred = -h(|v|) v."""
    rho = float(np.linalg.norm(v))
    if rho < _RHO_TINY:
        h = igso3.score_scale(0.0, p)
        return -h * np.eye(3)
    h, dh = igso3.score_scale_deriv(rho, p)
    return -(h * np.eye(3) + (dh / rho) * np.outer(v, v))


@dataclass
class TrainSample:
    """One corrupted training example with its clean targets."""

    x0: np.ndarray
    r0s: np.ndarray
    a0: np.ndarray
    ctx: np.ndarray
    t: float
    xt: np.ndarray
    rts: np.ndarray
    at: np.ndarray

    @property
    def state(self) -> GeoState:
        return GeoState(self.xt, self.rts, self.t)


def fidelity_loss_and_grad(model: ToyDenoiser, params: np.ndarray,
                           batch: list[TrainSample],
                           sched_x: NoiseScheduleR3,
                           sched_r: NoiseScheduleSO3,
                           ce_weight: float = 0.4,
                           count: bool = True):
    """Total fidelity loss dsm_x + dsm_r + ce_weight * ce with its exact
    analytic parameter gradient.

    Per sample: dsm_x is the mean squared per-residue coordinate error,
    dsm_r the mean squared Frobenius distance between exponentials of true
    and predicted tangent scores, ce the mean negative log posterior of the
    true types.  Returns (parts, grad).
    """
    if not batch:
        raise ValueError("empty batch")
    cfg = model.cfg
    w1, b1, w2, b2 = model.unpack(params)
    g_w1 = np.zeros_like(w1)
    g_b1 = np.zeros_like(b1)
    g_w2 = np.zeros_like(w2)
    g_b2 = np.zeros_like(b2)
    parts = {"dsm_x": 0.0, "dsm_r": 0.0, "ce": 0.0}
    nb = len(batch)

    for sample in batch:
        n = sample.r0s.shape[0]
        out = model.forward(params, sample.xt, sample.rts, sample.t,
                            sample.ctx, count=count)
        p_rot = igso3.IgSo3Params.from_sigma2(sched_r.sigma2_of_t(sample.t))

        # coordinate head
        diff = (out.x0_pred - sample.x0).reshape(n, 3)
        parts["dsm_x"] += float(np.sum(diff * diff)) / n / nb
        d_dx = 2.0 * diff / n / nb

        # rotation head
        s_true = igso3.score_batch(sample.r0s, sample.rts, p_rot)
        rho_p = np.linalg.norm(out.v, axis=1)
        s_pred = -igso3.score_scale(rho_p, p_rot)[:, None] * out.v
        d_v = np.zeros((n, 3))
        for i in range(n):
            m_true = so3.exp_map(s_true[i])
            m_pred = so3.exp_map(s_pred[i])
            delta = m_true - m_pred
            parts["dsm_r"] += float(np.sum(delta * delta)) / n / nb
            t_jac = rodrigues_jacobian(s_pred[i])               # (3, 3, 3)
            d_spred = -2.0 * np.einsum("kab,ab->k", t_jac, delta) / n / nb
            d_v[i] = _score_pred_jacobian(out.v[i], p_rot).T @ d_spred

        # sequence head
        picked = np.take_along_axis(out.posterior, sample.a0[:, None], axis=1)[:, 0]
        parts["ce"] += float(np.mean(-np.log(np.maximum(picked, 1e-300)))) / nb
        onehot = np.zeros_like(out.posterior)
        onehot[np.arange(n), sample.a0] = 1.0
        d_logits = ce_weight * (out.posterior - onehot) / n / nb

        d_out = np.concatenate([d_dx, d_v, d_logits], axis=1)   # (N, O)
        g_w2 += out.hidden.T @ d_out
        g_b2 += d_out.sum(axis=0)
        d_hidden = d_out @ w2.T
        d_z1 = d_hidden * (1.0 - out.hidden ** 2)
        g_w1 += out.feats.T @ d_z1
        g_b1 += d_z1.sum(axis=0)

    parts["fid"] = parts["dsm_x"] + parts["dsm_r"] + ce_weight * parts["ce"]
    grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
    return parts, grad
