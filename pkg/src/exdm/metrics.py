"""State coverage over 0.01 x 0.01 bins and robust aggregate statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PointOutOfBounds, TooFewRuns
from .maze import MazeSpec

BIN_SIZE = 0.01


@dataclass
class CoverageGrid:
    """Incremental visited-bin tracker for one maze."""

    spec: MazeSpec
    bin_size: float = BIN_SIZE

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.spec.bounds
        self.nx = int(round((xmax - xmin) / self.bin_size))
        self.ny = int(round((ymax - ymin) / self.bin_size))
        cx = (np.arange(self.nx) + 0.5) * self.bin_size
        cy = (np.arange(self.ny) + 0.5) * self.bin_size
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        centers = np.stack([gx, gy], axis=-1)
        self.free = ~self.spec.in_wall(centers)
        self.visited = np.zeros((self.nx, self.ny), dtype=bool)

    @property
    def free_bin_count(self) -> int:
        return int(self.free.sum())

    def bins_of(self, points) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        if p.size and (p.min() < 0.0 or p[:, 0].max() > self.nx * self.bin_size + 1e-12
                       or p[:, 1].max() > self.ny * self.bin_size + 1e-12):
            raise PointOutOfBounds("trajectory point outside the maze bounding box")
        ix = np.minimum(np.floor(p[:, 0] / self.bin_size).astype(int), self.nx - 1)
        iy = np.minimum(np.floor(p[:, 1] / self.bin_size).astype(int), self.ny - 1)
        return ix, iy

    def add(self, points) -> None:
        ix, iy = self.bins_of(points)
        self.visited[ix, iy] = True

    @property
    def coverage(self) -> float:
        return float((self.visited & self.free).sum() / self.free_bin_count)


def coverage(trajectories, spec: MazeSpec) -> float:
    """Fraction of free 0.01-bins containing at least one visited point."""
    grid = CoverageGrid(spec)
    pts = np.asarray(trajectories, dtype=float).reshape(-1, 2)
    if len(pts):
        grid.add(pts)
    return grid.coverage


def iqm(scores) -> float:
    """Interquartile mean: mean of the middle 50% of sorted scores (fractional weights at the cut)."""
    x = np.sort(np.asarray(scores, dtype=float).ravel())
    n = len(x)
    lo, hi = 0.25 * n, 0.75 * n
    # weight of each order statistic i (covering [i, i+1)) inside [lo, hi)
    edges = np.arange(n)
    w = np.clip(np.minimum(edges + 1, hi) - np.maximum(edges, lo), 0.0, 1.0)
    return float((w * x).sum() / w.sum())


def optimality_gap(scores, target: float = 1.0) -> float:
    return float(np.mean(np.maximum(0.0, target - np.asarray(scores, dtype=float))))


_STATS = {
    "median": lambda x: float(np.median(x)),
    "iqm": iqm,
    "mean": lambda x: float(np.mean(x)),
    "optimality_gap": optimality_gap,
}


def aggregate(runs, n_boot: int = 2000, ci: float = 0.95, seed: int = 0) -> dict:
    """Median, IQM, mean and optimality gap with stratified percentile-bootstrap CIs.

    ``runs`` is either a flat sequence of normalized scores (one stratum) or a mapping
    task -> scores; resampling happens within each task.
    """
    strata = [np.asarray(v, dtype=float).ravel() for v in runs.values()] if isinstance(runs, dict) \
        else [np.asarray(runs, dtype=float).ravel()]
    pooled = np.concatenate(strata)
    if len(pooled) < 2:
        raise TooFewRuns(f"need at least 2 runs, got {len(pooled)}")

    rng = np.random.default_rng(seed)
    boots = {k: np.empty(n_boot) for k in _STATS}
    for b in range(n_boot):
        sample = np.concatenate([s[rng.integers(0, len(s), len(s))] for s in strata])
        for k, fn in _STATS.items():
            boots[k][b] = fn(sample)

    alpha = (1.0 - ci) / 2.0
    out = {}
    for k, fn in _STATS.items():
        lo, hi = np.quantile(boots[k], [alpha, 1.0 - alpha])
        out[k] = {"value": fn(pooled), "ci_low": float(lo), "ci_high": float(hi)}
    return out
