"""Boundary-agreement objectives on denoised chunk estimates.

Two complementary losses: a lockstep quadratic residual against the
chain's Gaussian precision system, and a discounted one-sided loss whose
targets come from the latest model under stop-gradient while the
differentiable side comes from the EMA model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradtape as gt
from .chain import FactorChain


@dataclass(frozen=True)
class SyncSystem:
    """Block-tridiagonal precision matrix and information vector of the chain."""

    chain: FactorChain
    precision: np.ndarray  # (n*F*d, n*F*d), dense
    eta: np.ndarray        # (n*F*d,)
    c: np.ndarray          # boundary variances c_0..c_n


@dataclass(frozen=True)
class AsyncConfig:
    gamma: float
    squared_norms: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")


def build_sync_system(chain: FactorChain, c=None) -> SyncSystem:
    """Assemble the precision system whose exact solutions satisfy every
    anchor and transition constraint."""
    n, k = chain.n, chain.chunk_dim
    c = np.ones(n + 1) if c is None else np.asarray(c, dtype=np.float64)
    if c.shape != (n + 1,) or np.any(c <= 0):
        raise ValueError(f"c must be {n + 1} positive variances")
    A = chain.first_selector()
    B = chain.last_selector()

    P = np.zeros((n * k, n * k))
    eta = np.zeros(n * k)
    for i in range(n):
        sl = slice(i * k, (i + 1) * k)
        P[sl, sl] = A.T @ A / c[i] + B.T @ B / c[i + 1]
        if i + 1 < n:
            nxt = slice((i + 1) * k, (i + 2) * k)
            off = -B.T @ A / c[i + 1]
            P[sl, nxt] = off
            P[nxt, sl] = off.T
    eta[0 : k] += A.T @ chain.start / c[0]
    eta[(n - 1) * k : n * k] += B.T @ chain.goal / c[n]
    return SyncSystem(chain=chain, precision=P, eta=eta, c=c)


def sync_residual(system: SyncSystem, x0_est: np.ndarray) -> np.ndarray:
    """Plain-numpy residual vector of the precision system (diagnostics)."""
    return system.precision @ np.ravel(x0_est) - system.eta


def sync_loss(system: SyncSystem, x0_est: gt.Tensor, squared: bool = True) -> gt.Tensor:
    """Norm of the precision-system residual, differentiable w.r.t. x0_est.

    ``x0_est`` is an (n, F*d) tensor of flattened chunk estimates.
    """
    N = system.precision.shape[0]
    vec = gt.reshape(x0_est, (N, 1))
    resid = gt.reshape(gt.matmul(gt.Tensor(system.precision), vec), (N,)) - gt.Tensor(system.eta)
    if squared:
        return gt.tsum(gt.square(resid))
    return gt.l2norm(resid)


def _frame(x: gt.Tensor, row: int, col0: int, d: int) -> gt.Tensor:
    """Extract one d-dim frame of one chunk as a (1, d) tensor."""
    return gt.select_cols(gt.select_rows(x, [row]), col0, col0 + d)


def _term(resid: gt.Tensor, squared: bool) -> gt.Tensor:
    return gt.tsum(gt.square(resid)) if squared else gt.l2norm(resid)


def async_loss(cfg: AsyncConfig, ema_est: gt.Tensor, latest_est: gt.Tensor,
               chain: FactorChain) -> gt.Tensor:
    """Discounted forward/backward boundary losses with bootstrapped targets.

    Interior forward terms compare the latest model's outgoing boundary
    (stop-gradient) against the EMA incoming boundary; backward terms
    mirror it. Anchor terms carry no discount.
    """
    n, F, d = chain.n, chain.F, chain.d
    last0 = (F - 1) * d
    sq = cfg.squared_norms
    s = gt.Tensor(chain.start.reshape(1, d))
    g = gt.Tensor(chain.goal.reshape(1, d))

    total = _term(s - _frame(ema_est, 0, 0, d), sq)
    for i in range(n - 1):
        fwd = gt.stop_gradient(_frame(latest_est, i, last0, d)) - _frame(ema_est, i + 1, 0, d)
        total = total + gt.scale(_term(fwd, sq), cfg.gamma ** (i + 1))
        bwd = _frame(ema_est, i, last0, d) - gt.stop_gradient(_frame(latest_est, i + 1, 0, d))
        total = total + gt.scale(_term(bwd, sq), cfg.gamma ** (n - (i + 1)))
    total = total + _term(_frame(ema_est, n - 1, last0, d) - g, sq)
    return total


def joint_loss(system: SyncSystem, cfg: AsyncConfig, ema_est: gt.Tensor,
               latest_est: gt.Tensor, chain: FactorChain,
               w_sync: float = 1.0, w_async: float = 1.0) -> gt.Tensor:
    if w_sync < 0 or w_async < 0:
        raise ValueError("loss weights must be non-negative")
    total = None
    if w_sync > 0:
        total = gt.scale(sync_loss(system, ema_est), w_sync)
    if w_async > 0:
        a = gt.scale(async_loss(cfg, ema_est, latest_est, chain), w_async)
        total = a if total is None else total + a
    if total is None:
        total = gt.tsum(gt.scale(ema_est, 0.0))
    return total
