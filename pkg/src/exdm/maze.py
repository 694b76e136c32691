"""Reward-free 2D point-mass mazes with wall blocking, plus goal-reaching task rewards.

World coordinates are normalized so the maze width spans [0, 1]; each grid cell is
``1 / n_cols`` wide. Row 0 of the ASCII grid is drawn at the top (largest y).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    GoalInsideWall,
    NonRectangular,
    NoStart,
    SteppedAfterDone,
    UnreachableFreeCell,
)

WALL, FREE, START = "#", ".", "S"

BUNDLED_MAZES = (
    "square_a",
    "square_b",
    "square_c",
    "square_d",
    "square_tree",
    "square_bottleneck",
    "square_large",
)


@dataclass(frozen=True)
class MazeSpec:
    name: str
    grid: tuple[str, ...]
    cell_size: float
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    @property
    def n_rows(self) -> int:
        return len(self.grid)

    @property
    def n_cols(self) -> int:
        return len(self.grid[0])

    @property
    def wall_mask(self) -> np.ndarray:
        """Boolean (n_rows, n_cols) array, True where the cell is a wall."""
        return np.array([[ch == WALL for ch in row] for row in self.grid])

    @property
    def start_cells(self) -> list[tuple[int, int]]:
        return [(r, c) for r, row in enumerate(self.grid) for c, ch in enumerate(row) if ch == START]

    @property
    def n_free_cells(self) -> int:
        return int((~self.wall_mask).sum())

    def cell_center(self, r: int, c: int) -> np.ndarray:
        h = self.cell_size
        return np.array([(c + 0.5) * h, (self.n_rows - r - 0.5) * h])

    def cell_of(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Grid (row, col) indices of world points; may be out of range."""
        p = np.asarray(points, dtype=float)
        col = np.floor(p[..., 0] / self.cell_size).astype(int)
        row = self.n_rows - 1 - np.floor(p[..., 1] / self.cell_size).astype(int)
        return row, col

    def in_wall(self, points) -> np.ndarray:
        """True for points inside a wall cell or outside the maze bounds."""
        row, col = self.cell_of(points)
        inside = (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)
        walls = self.wall_mask
        out = np.ones(row.shape, dtype=bool)
        out[inside] = walls[row[inside], col[inside]]
        return out


def load_maze_spec(text: str, name: str = "maze") -> MazeSpec:
    """Parse and validate an ASCII maze ('#' wall, '.' free, 'S' start)."""
    rows = [line.rstrip("\r") for line in text.strip("\n").splitlines()]
    rows = [r for r in rows if r.strip() != ""]
    if not rows:
        raise NonRectangular("empty maze text")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise NonRectangular(f"row {i} has length {len(row)}, expected {width}")
        bad = [j for j, ch in enumerate(row) if ch not in (WALL, FREE, START)]
        if bad:
            raise NonRectangular(f"row {i} col {bad[0]}: unexpected character {row[bad[0]]!r}")
    if len(rows) < 3 or width < 3:
        raise NonRectangular(f"grid must be at least 3x3, got {len(rows)}x{width}")

    starts = [(r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch == START]
    if not starts:
        raise NoStart("no 'S' cell in maze")

    reached = _flood_fill(rows, starts[0])
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch != WALL and (r, c) not in reached:
                raise UnreachableFreeCell(f"free cell at row {r}, col {c} is not reachable from start")

    h = 1.0 / width
    return MazeSpec(name=name, grid=tuple(rows), cell_size=h, bounds=(0.0, 0.0, 1.0, len(rows) * h))


def _flood_fill(rows, start) -> set[tuple[int, int]]:
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < len(rows) and 0 <= nc < len(rows[0]) and rows[nr][nc] != WALL:
                if (nr, nc) not in seen:
                    seen.add((nr, nc))
                    queue.append((nr, nc))
    return seen


def load_maze_file(path) -> MazeSpec:
    path = Path(path)
    return load_maze_spec(path.read_text(encoding="utf-8"), name=path.stem)


def bundled_maze(name: str) -> MazeSpec:
    """Load one of the seven mazes shipped with the package."""
    if name not in BUNDLED_MAZES:
        raise KeyError(f"unknown bundled maze {name!r}; choose from {BUNDLED_MAZES}")
    text = resources.files("exdm").joinpath("mazes").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return load_maze_spec(text, name=name)


def resolve_maze(ref: str) -> MazeSpec:
    """Bundled maze name or path to a maze file."""
    if ref in BUNDLED_MAZES:
        return bundled_maze(ref)
    return load_maze_file(ref)


@dataclass
class MazeEnv:
    spec: MazeSpec
    max_action_norm: float = 0.05
    episode_len: int = 100
    state: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        if self.state is None:
            self.reset()

    @property
    def start_state(self) -> np.ndarray:
        return self.spec.cell_center(*self.spec.start_cells[0])

    def reset(self) -> np.ndarray:
        self.state = self.start_state.copy()
        self.step_count = 0
        return self.state.copy()

    @property
    def done(self) -> bool:
        return self.step_count >= self.episode_len

    def step(self, action) -> tuple[np.ndarray, bool]:
        if self.done:
            raise SteppedAfterDone(f"episode finished after {self.episode_len} steps; call reset()")
        a = np.clip(np.asarray(action, dtype=float), -self.max_action_norm, self.max_action_norm)
        self.state = sweep_move(self.spec, self.state, a)
        self.step_count += 1
        return self.state.copy(), self.done


def sweep_move(spec: MazeSpec, state, delta) -> np.ndarray:
    """Move x then y; an axis whose straight segment touches a wall cell is left unchanged."""
    x, y = float(state[0]), float(state[1])
    walls = spec.wall_mask
    h = spec.cell_size

    nx = x + float(delta[0])
    if nx != x:
        row = spec.n_rows - 1 - int(np.floor(y / h))
        c0, c1 = sorted((int(np.floor(x / h)), int(np.floor(nx / h))))
        if not _span_free(walls, row, c0, c1, axis=1):
            nx = x
    ny = y + float(delta[1])
    if ny != y:
        col = int(np.floor(nx / h))
        r0, r1 = sorted((spec.n_rows - 1 - int(np.floor(y / h)), spec.n_rows - 1 - int(np.floor(ny / h))))
        if not _span_free(walls, col, r0, r1, axis=0):
            ny = y
    return np.array([nx, ny])


def _span_free(walls: np.ndarray, fixed: int, lo: int, hi: int, axis: int) -> bool:
    n_rows, n_cols = walls.shape
    if axis == 1:
        if not 0 <= fixed < n_rows or lo < 0 or hi >= n_cols:
            return False
        return not walls[fixed, lo : hi + 1].any()
    if not 0 <= fixed < n_cols or lo < 0 or hi >= n_rows:
        return False
    return not walls[lo : hi + 1, fixed].any()


@dataclass(frozen=True)
class TaskReward:
    """Goal-reaching reward in [0, 1]; evaluated on the state the agent lands in."""

    goal: np.ndarray
    radius: float
    kind: str = "sparse"
    diam: float = float(np.sqrt(2.0))

    def __call__(self, s, a=None):
        d = np.linalg.norm(np.asarray(s, dtype=float) - self.goal, axis=-1)
        if self.kind == "sparse":
            return (d <= self.radius).astype(float)
        return np.maximum(0.0, 1.0 - d / self.diam)

    reward_fn = __call__


def make_task(env: MazeEnv, goal, kind: str = "sparse", radius: float = 0.1) -> TaskReward:
    if kind not in ("sparse", "dense"):
        raise ValueError(f"kind must be 'sparse' or 'dense', got {kind!r}")
    goal = np.asarray(goal, dtype=float)
    if env.spec.in_wall(goal[None])[0]:
        raise GoalInsideWall(f"goal {goal.tolist()} lies inside a wall or outside the maze")
    xmin, ymin, xmax, ymax = env.spec.bounds
    return TaskReward(goal=goal, radius=float(radius), kind=kind, diam=float(np.hypot(xmax - xmin, ymax - ymin)))
