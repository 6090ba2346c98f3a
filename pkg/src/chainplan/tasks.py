"""Desk-scale 2D datasets and plan metrics.

Two task families: short circular-arc clips whose composition should close
into a flower, and a start-goal segment-stitching family where unseen
pairs must be covered by composing seen route fragments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ARC_DEGREES = 120.0


@dataclass(frozen=True)
class ArcDataset:
    radius: float
    F: int
    chunks: np.ndarray  # (count, F, 2)
    centers: np.ndarray  # (count, 2)

    @property
    def chord(self) -> float:
        """Chord between consecutive frames (the characteristic length)."""
        step = np.deg2rad(ARC_DEGREES / (self.F - 1))
        return 2.0 * self.radius * np.sin(step / 2.0)


def gen_arcs(radius: float, F: int, count: int, rng: np.random.Generator,
             center_spread: float = 1.5) -> ArcDataset:
    """Clips of F points equally spaced along a 120-degree arc with random
    center and phase."""
    if count < 1 or F < 2:
        raise ValueError("need count >= 1 and F >= 2")
    centers = rng.uniform(-center_spread, center_spread, size=(count, 2))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
    offsets = np.deg2rad(np.linspace(0.0, ARC_DEGREES, F))
    ang = phases[:, None] + offsets[None, :]
    pts = centers[:, None, :] + radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return ArcDataset(radius=radius, F=F, chunks=pts, centers=centers)


@dataclass(frozen=True)
class SegmentTaskSet:
    starts: np.ndarray       # (N, 2)
    goals: np.ndarray        # (N, 2)
    demos: np.ndarray        # (n_demos, L, 2), demo k serves pair (k % N, k % N)
    chunks: np.ndarray       # (count, F, 2) random windows of the demos
    F: int
    corridor_width: float    # spacing between adjacent start rows
    ind_pairs: tuple = field(default=None)
    ood_pairs: tuple = field(default=None)

    def __post_init__(self):
        N = len(self.starts)
        object.__setattr__(self, "ind_pairs", tuple((i, i) for i in range(N)))
        object.__setattr__(self, "ood_pairs",
                           tuple((i, j) for i in range(N) for j in range(N) if i != j))


def _resample_polyline(points: np.ndarray, L: int) -> np.ndarray:
    """L frames equally spaced in arclength along a polyline."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, cum[-1], L)
    out = np.empty((L, 2))
    for k in range(2):
        out[:, k] = np.interp(s, cum, points[:, k])
    return out


def gen_segments(N: int, rng: np.random.Generator, F: int = 5, demo_frames: int = 25,
                 demos_per_pair: int = 40, route_length: float = 4.0,
                 jitter: float = 0.02) -> SegmentTaskSet:
    """N left-column starts and N right-column goals routed through two
    shared mid-corridor waypoints, so any start fragment composes with any
    goal fragment. Training chunks are random F-frame windows of the N
    seen (start_i -> goal_i) demonstrations."""
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    ys = np.arange(N) - (N - 1) / 2.0
    starts = np.stack([np.zeros(N), ys], axis=1)
    goals = np.stack([np.full(N, route_length), ys], axis=1)
    mids = np.array([[route_length / 3.0, 0.0], [2.0 * route_length / 3.0, 0.0]])

    demos = []
    for k in range(N * demos_per_pair):
        i = k % N
        way = np.vstack([starts[i], mids, goals[i]])
        way[1:-1] += rng.normal(0.0, jitter, size=(len(way) - 2, 2))
        demos.append(_resample_polyline(way, demo_frames))
    demos = np.stack(demos)

    windows = []
    per_demo = max(1, demo_frames - F + 1)
    for demo in demos:
        for _ in range(4):
            j = rng.integers(0, per_demo)
            windows.append(demo[j : j + F])
    chunks = np.stack(windows)
    return SegmentTaskSet(starts=starts, goals=goals, demos=demos, chunks=chunks,
                          F=F, corridor_width=1.0)


def ood_coverable(task: SegmentTaskSet, tol: float = 0.2) -> bool:
    """Graph-reachability check: fragments of the seen demos must connect
    every unseen start-goal pair through shared corridor waypoints.

    Nodes are starts, goals, and the corridor waypoints; each demo adds
    edges between the nodes it passes (closest approach within tol), in
    visiting order. An unseen pair is coverable if its start reaches its
    goal in that graph.
    """
    N = len(task.starts)
    mids = np.array([[task.demos[0, -1, 0] / 3.0, 0.0],
                     [2.0 * task.demos[0, -1, 0] / 3.0, 0.0]])
    nodes = np.vstack([task.starts, mids, task.goals])
    adj = {v: set() for v in range(len(nodes))}
    for demo in task.demos:
        visited = []
        for v, node in enumerate(nodes):
            dist = np.linalg.norm(demo - node, axis=1)
            k = int(np.argmin(dist))
            if dist[k] <= tol:
                visited.append((k, v))
        visited.sort()
        for (_, u), (_, v) in zip(visited, visited[1:]):
            adj[u].add(v)
            adj[v].add(u)

    def reaches(src, dst):
        seen, stack = {src}, [src]
        while stack:
            u = stack.pop()
            if u == dst:
                return True
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    return all(reaches(i, N + 2 + j) for i, j in task.ood_pairs)


def smoothness(plan: np.ndarray) -> float:
    """Mean squared second difference of the plan."""
    if len(plan) < 3:
        return 0.0
    dd = plan[2:] - 2.0 * plan[1:-1] + plan[:-2]
    return float(np.mean(np.sum(dd * dd, axis=-1)))


@dataclass(frozen=True)
class SuccessThresholds:
    tau_start: float
    tau_goal: float
    tau_boundary: float

    @classmethod
    def from_length(cls, characteristic_length: float, fraction: float = 0.05):
        tau = fraction * characteristic_length
        return cls(tau, tau, tau)


def evaluate_plan(plan: np.ndarray, chain, thresholds: SuccessThresholds,
                  chunks: np.ndarray | None = None) -> dict:
    """Residuals, smoothness, and the thresholded success verdict.

    Transition error is measured on the pre-merge chunks when given,
    else it is zero by construction of the merged plan.
    """
    plan = np.asarray(plan, dtype=np.float64)
    if not np.all(np.isfinite(plan)):
        raise ValueError("plan contains non-finite entries")
    start_err = float(np.linalg.norm(plan[0] - chain.start))
    goal_err = float(np.linalg.norm(plan[-1] - chain.goal))
    if chunks is not None:
        trans = [float(np.linalg.norm(chunks[i, -1] - chunks[i + 1, 0]))
                 for i in range(len(chunks) - 1)]
        max_trans = max(trans, default=0.0)
    else:
        max_trans = 0.0
    success = (start_err <= thresholds.tau_start
               and goal_err <= thresholds.tau_goal
               and max_trans <= thresholds.tau_boundary)
    return {
        "success": success,
        "start_err": start_err,
        "goal_err": goal_err,
        "max_transition_err": max_trans,
        "smoothness": smoothness(plan),
    }
