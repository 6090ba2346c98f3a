"""Chain of overlapping chunks: selectors, noise splitting, merging, residuals.

Consecutive chunks share exactly one boundary frame, so an n-chunk chain
of F-frame chunks covers m = n*(F-1) + 1 plan frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FactorChain:
    n: int
    F: int
    d: int
    start: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        if self.n < 1 or self.F < 2:
            raise ValueError(f"need n >= 1 and F >= 2, got n={self.n}, F={self.F}")
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))
        if self.start.shape != (self.d,) or self.goal.shape != (self.d,):
            raise ValueError(f"start/goal must have dim {self.d}")

    @property
    def m(self) -> int:
        return self.n * (self.F - 1) + 1

    @property
    def chunk_dim(self) -> int:
        return self.F * self.d

    def first_selector(self) -> np.ndarray:
        """d x (F*d) matrix extracting the first frame of a flattened chunk."""
        A = np.zeros((self.d, self.chunk_dim))
        A[:, : self.d] = np.eye(self.d)
        return A

    def last_selector(self) -> np.ndarray:
        """d x (F*d) matrix extracting the last frame of a flattened chunk."""
        B = np.zeros((self.d, self.chunk_dim))
        B[:, (self.F - 1) * self.d :] = np.eye(self.d)
        return B


def plan_to_chunks(chain: FactorChain, plan: np.ndarray) -> np.ndarray:
    """Overlapping F-frame windows of an m-frame plan, shape (n, F, d)."""
    step = chain.F - 1
    return np.stack([plan[i * step : i * step + chain.F] for i in range(chain.n)])


def split_noise(chain: FactorChain, rng: np.random.Generator) -> np.ndarray:
    """Gaussian chunks whose shared boundary frames are bit-equal copies."""
    plan = rng.standard_normal((chain.m, chain.d))
    return plan_to_chunks(chain, plan)


def merge(chunks: np.ndarray) -> np.ndarray:
    """Merge chunks into an m-frame plan, averaging each shared boundary frame."""
    n, F, d = chunks.shape
    m = n * (F - 1) + 1
    out = np.zeros((m, d))
    counts = np.zeros(m)
    for i in range(n):
        sl = slice(i * (F - 1), i * (F - 1) + F)
        out[sl] += chunks[i]
        counts[sl] += 1.0
    return out / counts[:, None]


def boundary_residuals(chunks: np.ndarray, chain: FactorChain) -> dict:
    """Anchor and transition disagreement norms of a chunk set."""
    start_err = float(np.linalg.norm(chunks[0, 0] - chain.start))
    goal_err = float(np.linalg.norm(chunks[-1, -1] - chain.goal))
    trans = np.array([
        float(np.linalg.norm(chunks[i, -1] - chunks[i + 1, 0]))
        for i in range(chain.n - 1)
    ])
    return {"start_err": start_err, "goal_err": goal_err, "transition_errs": trans}


def plan_csv_rows(plan: np.ndarray):
    """Rows (frame_index, dim_0, ..., dim_{d-1}) for the plan export."""
    for i, frame in enumerate(plan):
        yield (i, *frame)


def chunk_csv_rows(chunks: np.ndarray):
    """Rows (factor_index, frame_index, dim_0, ...) for the chunk export."""
    for i, chunk in enumerate(chunks):
        for j, frame in enumerate(chunk):
            yield (i, j, *frame)
