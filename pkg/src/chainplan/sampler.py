"""Samplers over the chunk chain.

Three routes share the DDIM backbone: the sphere-guided sampler steered by
joint message-passing losses, a score-composition baseline that denoises
the whole plan jointly, and an unguided per-chunk control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .chain import FactorChain, boundary_residuals, merge, plan_to_chunks, split_noise
from .denoiser import Denoiser, EmaPair, predict_x0
from .messages import AsyncConfig, SyncSystem, async_loss, joint_loss, sync_loss
from .schedule import NoiseSchedule, ddim_mu, noise_forward

GRAD_FLOOR = 1e-12


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    g_r: float = 0.6
    steps: int = 300
    seed: int = 0
    w_sync: float = 1.0
    w_async: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.g_r <= 1.0:
            raise ValueError(f"g_r must be in [0, 1], got {self.g_r}")


@dataclass
class StepRecord:
    t: int
    sync_loss: float
    async_loss: float
    start_err: float
    goal_err: float
    max_transition_err: float
    sphere_dev: float   # | ||x_{t-1} - mu|| - r |, NaN when no sphere step taken
    guided: bool
    nfe_total: int


@dataclass
class SampleTrace:
    records: list[StepRecord] = field(default_factory=list)
    chunks: np.ndarray = None   # (n, F, d) final denoised chunks
    plan: np.ndarray = None     # (m, d) merged plan
    nfe: int = 0
    boundary_nfe: int = 0       # baseline's marginal-model forward passes

    def max_boundary_residual(self, chain: FactorChain) -> float:
        r = boundary_residuals(self.chunks, chain)
        return max(r["start_err"], r["goal_err"], *r["transition_errs"], 0.0)


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NumericalFailure(f"non-finite state at diffusion step t={t}")


def _tweedie_diag(x0_flat: np.ndarray, chain: FactorChain) -> dict:
    return boundary_residuals(x0_flat.reshape(chain.n, chain.F, chain.d), chain)


def compose_guided(pair: EmaPair, chain: FactorChain, sched: NoiseSchedule,
                   sync: SyncSystem, async_cfg: AsyncConfig,
                   cfg: GuidanceConfig) -> SampleTrace:
    """Batched DDIM over all chunks with sphere-constrained guidance.

    Per step: both model heads predict clean chunks, the joint loss on the
    EMA estimates yields a descent direction through the tape, and the
    update interpolates it with the stochastic direction on the sphere of
    radius sqrt(s) * sigma_t around the deterministic DDIM mean.
    """
    rng = np.random.default_rng(cfg.seed)
    sub = sched.subsample(cfg.steps)
    n, k = chain.n, chain.chunk_dim
    s_elems = n * k
    root_s = np.sqrt(s_elems)

    x = split_noise(chain, rng).reshape(n, k)
    trace = SampleTrace()
    for t in range(sub.T, 0, -1):
        t_model = int(sub.timesteps[t])
        tape = gt.Tape()
        x_leaf = tape.leaf(x)
        ema_est = predict_x0(pair.ema, x_leaf, t_model, sched.T)
        latest_est = predict_x0(pair.latest, gt.stop_gradient(x_leaf), t_model, sched.T)
        trace.nfe += 2

        loss = joint_loss(sync, async_cfg, ema_est, latest_est, chain,
                          w_sync=cfg.w_sync, w_async=cfg.w_async)
        sync_val = float(sync_loss(sync, gt.Tensor(ema_est.data)).data)
        async_val = float(async_loss(async_cfg, gt.Tensor(ema_est.data),
                                     gt.Tensor(latest_est.data), chain).data)

        mu = ddim_mu(sub, x, ema_est.data, t)
        sigma = sub.sigma[t]
        r = root_s * sigma
        eps = rng.standard_normal(x.shape)

        guided = False
        sphere_dev = np.nan
        if sigma == 0.0:
            x_next = mu
        elif cfg.g_r == 0.0:
            d_m = sigma * eps
            x_next = mu + r * d_m / np.sqrt(np.sum(d_m * d_m))
            sphere_dev = abs(np.linalg.norm(x_next - mu) - r)
        else:
            (grad,) = gt.backward(loss, [x_leaf])
            gn = np.linalg.norm(grad)
            if gn < GRAD_FLOOR:
                x_next = mu + sigma * eps  # plain DDIM step, guidance skipped
            else:
                d_star = -root_s * sigma * grad / gn
                d_sample = sigma * eps
                d_m = d_sample + cfg.g_r * (d_star - d_sample)
                x_next = mu + r * d_m / np.linalg.norm(d_m)
                guided = True
                sphere_dev = abs(np.linalg.norm(x_next - mu) - r)
        _check_finite(x_next, t_model)

        diag = _tweedie_diag(ema_est.data, chain)
        trace.records.append(StepRecord(
            t=t_model, sync_loss=sync_val, async_loss=async_val,
            start_err=diag["start_err"], goal_err=diag["goal_err"],
            max_transition_err=float(max(diag["transition_errs"], default=0.0)),
            sphere_dev=sphere_dev, guided=guided, nfe_total=trace.nfe))
        x = x_next

    trace.chunks = x.reshape(n, chain.F, chain.d)
    trace.plan = merge(trace.chunks)
    return trace


def compose_independent(pair: EmaPair, chain: FactorChain, sched: NoiseSchedule,
                        cfg: GuidanceConfig) -> SampleTrace:
    """Each chunk denoised from its own noise with no cross-factor terms.

    Uses the same per-chunk sphere update as the guided route at g_r = 0,
    so an n = 1 chain reproduces the guided sampler bit for bit.
    """
    rng = np.random.default_rng(cfg.seed)
    sub = sched.subsample(cfg.steps)
    n, k = chain.n, chain.chunk_dim
    root_k = np.sqrt(k)  # per-chunk element count; equals the guided radius when n == 1

    x = split_noise(chain, rng).reshape(n, k)
    trace = SampleTrace()
    for t in range(sub.T, 0, -1):
        t_model = int(sub.timesteps[t])
        x0 = predict_x0(pair.ema, x, t_model, sched.T)
        trace.nfe += 1
        mu = ddim_mu(sub, x, x0, t)
        sigma = sub.sigma[t]
        eps = rng.standard_normal(x.shape)
        if sigma == 0.0:
            x_next = mu
        else:
            r = root_k * sigma
            d_m = sigma * eps
            norms = np.sqrt(np.sum(d_m * d_m, axis=1, keepdims=True))
            x_next = mu + r * d_m / norms
        _check_finite(x_next, t_model)
        diag = _tweedie_diag(x0, chain)
        trace.records.append(StepRecord(
            t=t_model, sync_loss=np.nan, async_loss=np.nan,
            start_err=diag["start_err"], goal_err=diag["goal_err"],
            max_transition_err=float(max(diag["transition_errs"], default=0.0)),
            sphere_dev=np.nan, guided=False, nfe_total=trace.nfe))
        x = x_next

    trace.chunks = x.reshape(n, chain.F, chain.d)
    trace.plan = merge(trace.chunks)
    return trace


def compose_diffcollage(chunk_pair: EmaPair, boundary_pair: EmaPair,
                        chain: FactorChain, sched: NoiseSchedule,
                        cfg: GuidanceConfig) -> SampleTrace:
    """Score-composition baseline: joint denoising of the full plan.

    The composed score sums the chunk-model scores over overlapping
    windows and subtracts the single-frame marginal score at each shared
    frame (degree-2 variables). Start/goal conditioning is by noisy
    replacement of the endpoint frames during the loop; the reported plan
    is the model output after the last step, never clamped.
    """
    if boundary_pair is None:
        raise ValueError("the score-composition baseline requires a boundary model")
    rng = np.random.default_rng(cfg.seed)
    sub = sched.subsample(cfg.steps)
    n, F, d, m = chain.n, chain.F, chain.d, chain.m
    step = F - 1
    shared = [i * step for i in range(1, n)]

    z = rng.standard_normal((m, d))
    z[0] = noise_forward(sched, chain.start, sched.T, rng.standard_normal(d))
    z[-1] = noise_forward(sched, chain.goal, sched.T, rng.standard_normal(d))

    trace = SampleTrace()
    for t in range(sub.T, 0, -1):
        t_model = int(sub.timesteps[t])
        ab = sub.alpha_bar[t]

        chunks_t = plan_to_chunks(chain, z).reshape(n, F * d)
        x0_chunks = predict_x0(chunk_pair.ema, chunks_t, t_model, sched.T)
        trace.nfe += 1
        factor_score = (-(chunks_t - np.sqrt(ab) * x0_chunks) / (1.0 - ab)).reshape(n, F, d)

        score = np.zeros((m, d))
        for i in range(n):
            score[i * step : i * step + F] += factor_score[i]
        if shared:
            u = z[shared]
            x0_b = predict_x0(boundary_pair.ema, u, t_model, sched.T)
            trace.boundary_nfe += 1
            score[shared] -= -(u - np.sqrt(ab) * x0_b) / (1.0 - ab)

        x0_eq = (z + (1.0 - ab) * score) / np.sqrt(ab)
        mu = ddim_mu(sub, z, x0_eq, t)
        sigma = sub.sigma[t]
        z_next = mu + sigma * rng.standard_normal(z.shape)
        if t > 1:
            z_next[0] = noise_forward(sched, chain.start, int(sub.timesteps[t - 1]),
                                      rng.standard_normal(d))
            z_next[-1] = noise_forward(sched, chain.goal, int(sub.timesteps[t - 1]),
                                       rng.standard_normal(d))
        _check_finite(z_next, t_model)

        diag = boundary_residuals(plan_to_chunks(chain, x0_eq), chain)
        trace.records.append(StepRecord(
            t=t_model, sync_loss=np.nan, async_loss=np.nan,
            start_err=diag["start_err"], goal_err=diag["goal_err"],
            max_transition_err=float(max(diag["transition_errs"], default=0.0)),
            sphere_dev=np.nan, guided=False, nfe_total=trace.nfe))
        z = z_next

    trace.plan = z
    trace.chunks = plan_to_chunks(chain, z)
    return trace
