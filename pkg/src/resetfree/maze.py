"""Deterministic point-mass maze.

A state is a float64 array ``[x, y, vx, vy]``; an action is ``[ax, ay]`` with
components clamped to ``[-1, 1]``.  The map is stored with row 0 at the top,
while ``y`` grows upward, so the ASCII picture reads the way it is drawn.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels

DEFAULTS = {
    "cell_size": 1.0,
    "dt": 0.1,
    "damping": 0.9,
    "max_speed": 2.0,
    "max_episode_steps_forward": 500,
    "max_episode_steps_reset": 500,
}

_INT_KEYS = ("max_episode_steps_forward", "max_episode_steps_reset")
_FLOAT_KEYS = ("cell_size", "goal_radius", "dt", "damping", "max_speed")


class MazeParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MazeSpec:
    name: str
    walls: np.ndarray  # bool, rows x cols, row 0 at the top
    cell_size: float
    goal_center: np.ndarray
    goal_radius: float
    dt: float
    max_speed: float
    damping: float
    max_episode_steps_forward: int
    max_episode_steps_reset: int
    _free: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        walls = np.ascontiguousarray(self.walls, dtype=np.bool_)
        walls.setflags(write=False)
        object.__setattr__(self, "walls", walls)
        goal = np.asarray(self.goal_center, dtype=np.float64).copy()
        goal.setflags(write=False)
        object.__setattr__(self, "goal_center", goal)
        free = np.argwhere(~walls)
        free.setflags(write=False)
        object.__setattr__(self, "_free", free)

    @property
    def rows(self) -> int:
        return self.walls.shape[0]

    @property
    def cols(self) -> int:
        return self.walls.shape[1]

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def height(self) -> float:
        return self.rows * self.cell_size

    @property
    def free_cells(self) -> np.ndarray:
        """``(n, 2)`` array of ``(row, col)`` for every free cell."""
        return self._free

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        col = int(np.floor(x / self.cell_size))
        row = self.rows - 1 - int(np.floor(y / self.cell_size))
        return row, col

    def cell_center(self, row: int, col: int) -> np.ndarray:
        cs = self.cell_size
        return np.array([(col + 0.5) * cs, (self.rows - 1 - row + 0.5) * cs])

    def is_free(self, x: float, y: float) -> bool:
        if not (0.0 <= x < self.width and 0.0 <= y < self.height):
            return False
        row, col = self.cell_of(x, y)
        return not self.walls[row, col]

    def in_goal(self, position) -> bool:
        p = np.asarray(position, dtype=np.float64)[:2]
        return bool(np.hypot(*(p - self.goal_center)) <= self.goal_radius)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def load_maze_spec(text: str, name: str | None = None) -> MazeSpec:
    """Parse an ASCII map followed by ``key = value`` parameter lines."""
    map_lines: list[str] = []
    params: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            key = key.strip()
            if key in params:
                raise MazeParseError(f"line {lineno}: duplicate parameter {key!r}")
            params[key] = value.strip()
            continue
        if params:
            raise MazeParseError(f"line {lineno}: map row after parameter block")
        bad = set(line) - set("#.G")
        if bad:
            raise MazeParseError(f"line {lineno}: unexpected map characters {sorted(bad)}")
        map_lines.append(line)

    if not map_lines:
        raise MazeParseError("no map rows found")
    cols = len(map_lines[0])
    for r, line in enumerate(map_lines):
        if len(line) != cols:
            raise MazeParseError(f"row {r}: length {len(line)} differs from {cols}")
    grid = np.array([list(line) for line in map_lines])
    rows = grid.shape[0]

    goals = np.argwhere(grid == "G")
    if len(goals) == 0:
        raise MazeParseError("map has no 'G' cell")
    if len(goals) > 1:
        cells = ", ".join(f"(row {r}, col {c})" for r, c in goals)
        raise MazeParseError(f"map has {len(goals)} 'G' cells: {cells}")

    for r in range(rows):
        for c in range(cols):
            if (r in (0, rows - 1) or c in (0, cols - 1)) and grid[r, c] != "#":
                raise MazeParseError(f"unwalled border at cell (row {r}, col {c})")

    walls = grid == "#"
    _check_connected(walls)

    known = set(DEFAULTS) | {"name", "goal_radius", "goal_center"}
    unknown = set(params) - known
    if unknown:
        raise MazeParseError(f"unknown parameters: {sorted(unknown)}")

    values: dict = dict(DEFAULTS)
    try:
        for key in _FLOAT_KEYS:
            if key in params:
                values[key] = float(params[key])
        for key in _INT_KEYS:
            if key in params:
                values[key] = int(params[key])
    except ValueError as exc:
        raise MazeParseError(f"bad parameter value: {exc}") from None
    cs = values["cell_size"]
    values.setdefault("goal_radius", 0.5 * cs)

    gr, gc = goals[0]
    goal_center = np.array([(gc + 0.5) * cs, (rows - 1 - gr + 0.5) * cs])
    if "goal_center" in params:
        try:
            goal_center = np.array([float(v) for v in params["goal_center"].split(",")])
        except ValueError:
            raise MazeParseError(f"bad goal_center {params['goal_center']!r}") from None
        if goal_center.shape != (2,):
            raise MazeParseError("goal_center needs two coordinates")

    spec = MazeSpec(
        name=params.get("name", name or "maze"),
        walls=walls,
        cell_size=cs,
        goal_center=goal_center,
        goal_radius=values["goal_radius"],
        dt=values["dt"],
        max_speed=values["max_speed"],
        damping=values["damping"],
        max_episode_steps_forward=values["max_episode_steps_forward"],
        max_episode_steps_reset=values["max_episode_steps_reset"],
    )
    validate(spec)
    return spec


def validate(spec: MazeSpec) -> None:
    if spec.cell_size <= 0:
        raise MazeParseError("cell_size must be positive")
    if spec.goal_radius <= 0:
        raise MazeParseError("goal_radius must be positive")
    if spec.dt <= 0:
        raise MazeParseError("dt must be positive")
    if not 0.0 <= spec.damping <= 1.0:
        raise MazeParseError("damping must lie in [0, 1]")
    if spec.max_speed <= 0:
        raise MazeParseError("max_speed must be positive")
    # One step may cross at most one cell boundary per axis.
    if spec.max_speed * spec.dt >= spec.cell_size:
        raise MazeParseError("max_speed * dt must be smaller than cell_size")
    if spec.max_episode_steps_forward <= 0 or spec.max_episode_steps_reset <= 0:
        raise MazeParseError("episode step caps must be positive")
    gx, gy = spec.goal_center
    if not spec.is_free(gx, gy):
        r, c = spec.cell_of(gx, gy)
        raise MazeParseError(f"goal in wall at cell (row {r}, col {c})")


def _check_connected(walls: np.ndarray) -> None:
    free = np.argwhere(~walls)
    start = tuple(free[0])
    seen = _flood(walls, start)
    for r, c in free:
        if (r, c) not in seen:
            raise MazeParseError(
                f"free cell (row {r}, col {c}) is not connected to (row {start[0]}, col {start[1]})")


def _flood(walls: np.ndarray, start: tuple[int, int]) -> dict[tuple[int, int], int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nb = (r + dr, c + dc)
            if nb not in dist and not walls[nb]:
                dist[nb] = dist[(r, c)] + 1
                queue.append(nb)
    return dist


def load_maze_file(path) -> MazeSpec:
    path = Path(path)
    return load_maze_spec(path.read_text(encoding="utf-8"), name=path.stem)


def shipped_mazes() -> list[str]:
    root = resources.files("resetfree") / "mazes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".maze"))


def load_named_maze(name: str) -> MazeSpec:
    """Load a shipped map (``1way``, ``2way``, ``4way``) or a path to a maze file."""
    candidate = Path(name)
    if candidate.suffix == ".maze" and candidate.exists():
        return load_maze_file(candidate)
    res = resources.files("resetfree") / "mazes" / f"{name}.maze"
    if not res.is_file():
        raise FileNotFoundError(f"no shipped maze named {name!r}; have {shipped_mazes()}")
    return load_maze_spec(res.read_text(encoding="utf-8"), name=name)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def make_state(position, velocity=(0.0, 0.0)) -> np.ndarray:
    return np.array([position[0], position[1], velocity[0], velocity[1]], dtype=np.float64)


def env_step(spec: MazeSpec, state, action) -> tuple[np.ndarray, float, bool]:
    """Advance one step; returns ``(next_state, reward, reached_goal)``."""
    nxt, rew = step_many(spec, np.asarray(state, dtype=np.float64).reshape(1, 4),
                         np.asarray(action, dtype=np.float64).reshape(1, 2))
    r = float(rew[0])
    return nxt[0], r, r == 1.0


def step_many(spec: MazeSpec, states: np.ndarray, actions: np.ndarray):
    """Batched ``env_step`` over ``(n, 4)`` states and ``(n, 2)`` actions."""
    gx, gy = spec.goal_center
    return kernels.step_batch(
        spec.walls, spec.cell_size, spec.dt, spec.damping, spec.max_speed,
        gx, gy, spec.goal_radius,
        np.ascontiguousarray(states, dtype=np.float64),
        np.ascontiguousarray(actions, dtype=np.float64),
    )


def in_goal_many(spec: MazeSpec, states: np.ndarray) -> np.ndarray:
    d = np.hypot(states[:, 0] - spec.goal_center[0], states[:, 1] - spec.goal_center[1])
    return d <= spec.goal_radius


def sample_uniform_valid(spec: MazeSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform position over free space (rejection sampling), zero velocity."""
    while True:
        x = rng.uniform(0.0, spec.width)
        y = rng.uniform(0.0, spec.height)
        if spec.is_free(x, y):
            return make_state((x, y))


def sample_uniform_valid_many(spec: MazeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((n, 4))
    for i in range(n):
        out[i] = sample_uniform_valid(spec, rng)
    return out


# ---------------------------------------------------------------------------
# normalisation and geometry helpers
# ---------------------------------------------------------------------------

def state_bounds(spec: MazeSpec) -> tuple[np.ndarray, np.ndarray]:
    low = np.array([0.0, 0.0, -spec.max_speed, -spec.max_speed])
    high = np.array([spec.width, spec.height, spec.max_speed, spec.max_speed])
    return low, high


def normalize_state(spec: MazeSpec, state) -> np.ndarray:
    """Affine map of the bounding box (and velocity range) onto ``[0, 1]^4``."""
    low, high = state_bounds(spec)
    return (np.asarray(state, dtype=np.float64) - low) / (high - low)


def denormalize_state(spec: MazeSpec, unit) -> np.ndarray:
    low, high = state_bounds(spec)
    return low + np.asarray(unit, dtype=np.float64) * (high - low)


def goal_distance_map(spec: MazeSpec) -> dict[tuple[int, int], int]:
    """BFS distance (in cells) from the goal cell to every free cell."""
    gr, gc = spec.cell_of(*spec.goal_center)
    return _flood(spec.walls, (gr, gc))


def farthest_state(spec: MazeSpec) -> np.ndarray:
    """Centre of the free cell farthest from the goal; ties go to lowest row, then column."""
    dist = goal_distance_map(spec)
    best = max(dist.values())
    row, col = min(cell for cell, d in dist.items() if d == best)
    return make_state(spec.cell_center(row, col))


def render(spec: MazeSpec) -> str:
    lines = []
    gr, gc = spec.cell_of(*spec.goal_center)
    for r in range(spec.rows):
        lines.append("".join(
            "G" if (r, c) == (gr, gc) else ("#" if spec.walls[r, c] else ".")
            for c in range(spec.cols)))
    return "\n".join(lines)
