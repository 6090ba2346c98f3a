"""Exact gap between the true noisy chain distribution and the
factor-product estimator, on small finite-alphabet chains.

Everything is a finite sum, so the covariance identity can be cross
checked to machine precision against direct enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


@dataclass(frozen=True)
class DiscreteChain:
    """Three-variable Markov chain over a K-letter alphabet."""

    p1: np.ndarray   # (K,) distribution of the first variable
    T12: np.ndarray  # (K, K) rows: p(second | first)
    T23: np.ndarray  # (K, K) rows: p(third | second)

    def __post_init__(self):
        for name, arr in (("p1", self.p1), ("T12", self.T12), ("T23", self.T23)):
            a = np.asarray(arr, dtype=np.float64)
            object.__setattr__(self, name, a)
            if np.any(a < 0):
                raise ValueError(f"{name} has negative entries")
            sums = a.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > 1e-12):
                raise ValueError(f"{name} rows must sum to 1")

    @property
    def K(self) -> int:
        return len(self.p1)

    def pair12(self) -> np.ndarray:
        return self.p1[:, None] * self.T12

    def p2(self) -> np.ndarray:
        return self.pair12().sum(axis=0)

    def pair23(self) -> np.ndarray:
        return self.p2()[:, None] * self.T23


def flip_channel(K: int, strength: float) -> np.ndarray:
    """Symmetric noise: keep the symbol w.p. 1-strength, else uniform flip."""
    if not 0.0 <= strength <= (K - 1) / K:
        raise ValueError(f"strength must be in [0, {(K - 1) / K}], got {strength}")
    C = np.full((K, K), strength / (K - 1))
    np.fill_diagonal(C, 1.0 - strength)
    return C


@dataclass(frozen=True)
class GapResult:
    p_true: float
    p_hat: float
    delta: float


def _abc(chain: DiscreteChain, channel: np.ndarray, obs):
    """Per-boundary-value messages a, b and evidence c for a fixed observation.

    The noise channel factorizes per variable: column channel[:, o] holds
    the likelihood of observing o from each clean symbol.
    """
    o1, o2, o3 = obs
    like1, like2, like3 = channel[:, o1], channel[:, o2], channel[:, o3]
    a = (chain.pair12() * like1[:, None]).sum(axis=0) * like2
    b = (chain.pair23() * like3[None, :]).sum(axis=1) * like2
    c = chain.p2() * like2
    return a, b, c


def gap_direct(chain: DiscreteChain, channel: np.ndarray, obs) -> GapResult:
    """Exhaustive-sum true probability vs. the factor-product estimator."""
    o1, o2, o3 = obs
    like1, like2, like3 = channel[:, o1], channel[:, o2], channel[:, o3]
    joint = chain.pair12()[:, :, None] * chain.T23[None, :, :]
    p_true = float(np.einsum("ijk,i,j,k->", joint, like1, like2, like3))
    a, b, c = _abc(chain, channel, obs)
    p_hat = float(a.sum() * b.sum() / c.sum())
    return GapResult(p_true=p_true, p_hat=p_hat, delta=p_true - p_hat)


class BoundaryEvidenceZero(ZeroDivisionError):
    """Some boundary value has zero evidence; the ratio form is undefined."""


@dataclass(frozen=True)
class CovarianceResult:
    Z: float
    cov: float
    delta_formula: float


def gap_covariance(chain: DiscreteChain, channel: np.ndarray, obs) -> CovarianceResult:
    """The gap expressed as Z times the covariance of the two message/evidence
    ratios under the evidence-weighted boundary measure."""
    a, b, c = _abc(chain, channel, obs)
    if np.any(c == 0.0):
        raise BoundaryEvidenceZero(f"zero boundary evidence at obs {tuple(obs)}")
    Z = float(c.sum())
    q = c / Z
    ra, rb = a / c, b / c
    cov = float((q * ra * rb).sum() - (q * ra).sum() * (q * rb).sum())
    return CovarianceResult(Z=Z, cov=cov, delta_formula=Z * cov)


def all_observations(K: int):
    return product(range(K), repeat=3)


def gap_sweep(chain: DiscreteChain, noise_strengths) -> list[dict]:
    """Max absolute gap over all observations, per noise strength."""
    rows = []
    for s in noise_strengths:
        C = flip_channel(chain.K, s)
        worst = max(abs(gap_direct(chain, C, obs).delta) for obs in all_observations(chain.K))
        rows.append({"strength": float(s), "max_abs_delta": worst})
    return rows


def random_chain(K: int, rng: np.random.Generator) -> DiscreteChain:
    def row_dist(shape):
        x = rng.random(shape) + 1e-3
        return x / x.sum(axis=-1, keepdims=True)

    return DiscreteChain(p1=row_dist(K), T12=row_dist((K, K)), T23=row_dist((K, K)))


def sticky_chain(K: int, stay: float = 0.9) -> DiscreteChain:
    T = np.full((K, K), (1.0 - stay) / (K - 1))
    np.fill_diagonal(T, stay)
    return DiscreteChain(p1=np.full(K, 1.0 / K), T12=T, T23=T)


def verify_identity(K: int, trials: int, rng: np.random.Generator,
                    strength_range=(0.05, 0.45)) -> list[dict]:
    """Cross-check direct enumeration against the covariance formula on
    random instances; one row per trial with both deltas and their gap."""
    rows = []
    lo, hi = strength_range
    hi = min(hi, (K - 1) / K)
    for trial in range(trials):
        chain = random_chain(K, rng)
        C = flip_channel(K, rng.uniform(lo, hi))
        obs = tuple(rng.integers(0, K, size=3))
        direct = gap_direct(chain, C, obs)
        formula = gap_covariance(chain, C, obs)
        rows.append({
            "trial": trial,
            "obs": obs,
            "delta_direct": direct.delta,
            "delta_formula": formula.delta_formula,
            "abs_diff": abs(direct.delta - formula.delta_formula),
        })
    return rows
