"""Deterministic 2D point-mass maze world.

States are float32 arrays [x, y, vx, vy] in world units. Walls are grid
cells; collisions clip the motion at the first wall face crossed and zero
the velocity component normal to it. step() computes in float64 but rounds
its output to float32, so recorded episodes replay bitwise.
"""

import numpy as np
from dataclasses import dataclass, field

WALL = 1
FREE = 0

POS = slice(0, 2)
VEL = slice(2, 4)

# goal test looks at positions only unless a config overrides it
DEFAULT_GOAL_MASK = (0, 1)


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MazeSpec:
    """World geometry plus physics constants. Immutable, safe to share."""

    name: str
    grid: np.ndarray  # (H, W) uint8, row 0 = bottom row, 1 = wall
    cell_size: float
    dt: float = 0.02
    v_max: float = 5.0
    a_max: float = 10.0
    backoff: float = 1e-4  # wall back-off on collision, in cell widths

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.grid, dtype=np.uint8))
        if g.ndim != 2 or g.shape[0] < 3 or g.shape[1] < 3:
            raise GridError("grid must be 2-D and at least 3x3")
        if not (g[0].all() and g[-1].all() and g[:, 0].all() and g[:, -1].all()):
            raise GridError("grid border must be fully walled")
        if not (g <= 1).all():
            raise GridError("grid entries must be 0 (free) or 1 (wall)")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        for fname in ("cell_size", "dt", "v_max", "a_max"):
            if getattr(self, fname) <= 0:
                raise GridError(f"{fname} must be positive")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.zeros(2)
        hi = np.array([self.width, self.height], dtype=np.float64) * self.cell_size
        return lo, hi

    def cell_of(self, p) -> tuple[int, int]:
        """Grid cell (ix, iy) containing world point p, clipped to the grid."""
        ix = min(max(int(p[0] // self.cell_size), 0), self.width - 1)
        iy = min(max(int(p[1] // self.cell_size), 0), self.height - 1)
        return ix, iy

    def is_wall(self, ix: int, iy: int) -> bool:
        if ix < 0 or iy < 0 or ix >= self.width or iy >= self.height:
            return True
        return bool(self.grid[iy, ix])

    def free_cells(self) -> np.ndarray:
        """(N, 2) int array of (ix, iy) free cells, row-major order."""
        iy, ix = np.nonzero(self.grid == FREE)
        return np.stack([ix, iy], axis=1)


@dataclass(frozen=True)
class GoalSpec:
    """Goal state plus the tolerance box in normalized coordinates."""

    goal: np.ndarray  # (4,) float32 world-units state
    eps: float
    mask: tuple[int, ...] = DEFAULT_GOAL_MASK


def _crossings(spec: MazeSpec, p0, d):
    """Cell boundary crossings along p0 -> p0+d, in increasing t.

    Yields (t, ix, iy, axes) where (ix, iy) is the cell being entered and
    axes lists the axis indices crossed (two when the segment passes a cell
    corner exactly).
    """
    cs = spec.cell_size
    ix, iy = spec.cell_of(p0)
    tx = ty = np.inf
    dtx = dty = np.inf
    sx = sy = 0
    if d[0] > 0:
        sx, dtx = 1, cs / d[0]
        tx = ((ix + 1) * cs - p0[0]) / d[0]
    elif d[0] < 0:
        sx, dtx = -1, cs / -d[0]
        tx = (ix * cs - p0[0]) / d[0]
    if d[1] > 0:
        sy, dty = 1, cs / d[1]
        ty = ((iy + 1) * cs - p0[1]) / d[1]
    elif d[1] < 0:
        sy, dty = -1, cs / -d[1]
        ty = (iy * cs - p0[1]) / d[1]
    while True:
        t = min(tx, ty)
        if t >= 1.0:
            return
        if abs(tx - ty) <= 1e-12:
            ix += sx
            iy += sy
            tx += dtx
            ty += dty
            yield t, ix, iy, (0, 1)
        elif tx < ty:
            ix += sx
            tx += dtx
            yield t, ix, iy, (0,)
        else:
            iy += sy
            ty += dty
            yield t, ix, iy, (1,)


def segment_collides(spec: MazeSpec, p0, p1) -> bool:
    """True if the straight segment p0 -> p1 touches any wall cell."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    ix, iy = spec.cell_of(p0)
    if spec.is_wall(ix, iy):
        return True
    d = p1 - p0
    for t, cx, cy, axes in _crossings(spec, p0, d):
        if len(axes) == 2:
            # corner passage: blocked by the diagonal cell or by both side cells
            if spec.is_wall(cx, cy):
                return True
            if spec.is_wall(cx, cy - int(np.sign(d[1]))) and spec.is_wall(
                cx - int(np.sign(d[0])), cy
            ):
                return True
        elif spec.is_wall(cx, cy):
            return True
    return False


def step(spec: MazeSpec, s, a) -> np.ndarray:
    """Advance one control step with semi-implicit Euler and wall clipping.

    Returns a float32 state; identical inputs give bitwise-identical output.
    """
    s = np.asarray(s, dtype=np.float64)
    a = np.clip(np.asarray(a, dtype=np.float64), -spec.a_max, spec.a_max)
    v = np.clip(s[VEL] + a * spec.dt, -spec.v_max, spec.v_max)
    p0 = s[POS].copy()
    d = v * spec.dt
    p1 = p0 + d
    v = v.copy()

    hit_t = None
    hit_axes = None
    for t, cx, cy, axes in _crossings(spec, p0, d):
        if len(axes) == 2:
            sxc = int(np.sign(d[0]))
            syc = int(np.sign(d[1]))
            wall_x = spec.is_wall(cx, cy - syc)
            wall_y = spec.is_wall(cx - sxc, cy)
            if spec.is_wall(cx, cy) or wall_x or wall_y:
                hit_t = t
                if wall_x and not wall_y:
                    hit_axes = (0,)
                elif wall_y and not wall_x:
                    hit_axes = (1,)
                else:
                    hit_axes = (0, 1)
                break
        elif spec.is_wall(cx, cy):
            hit_t = t
            hit_axes = axes
            break

    if hit_t is not None:
        p1 = p0 + hit_t * d
        margin = spec.backoff * spec.cell_size
        for ax in hit_axes:
            p1[ax] -= np.sign(d[ax]) * margin
            v[ax] = 0.0
        ix, iy = spec.cell_of(p1)
        if spec.is_wall(ix, iy):  # degenerate float corner: refuse to move
            p1 = p0
            v[:] = 0.0

    out = np.empty(4, dtype=np.float32)
    out[POS] = p1
    out[VEL] = v
    return out


def sample_free_state(spec: MazeSpec, rng: np.random.Generator, clearance: float = 0.15) -> np.ndarray:
    """Random rest state: uniform free cell, uniform interior position.

    clearance is the margin to the cell edge as a fraction of cell_size.
    """
    cells = spec.free_cells()
    if len(cells) == 0:
        raise GridError("maze has no free cells")
    ix, iy = cells[rng.integers(len(cells))]
    u = rng.uniform(clearance, 1.0 - clearance, size=2)
    s = np.zeros(4, dtype=np.float32)
    s[0] = (ix + u[0]) * spec.cell_size
    s[1] = (iy + u[1]) * spec.cell_size
    return s


def in_goal(s, gs: GoalSpec, normalizer) -> bool:
    """Goal membership: l-inf over masked normalized dims within eps."""
    ns = normalizer.normalize(np.asarray(s, dtype=np.float64))
    ng = normalizer.normalize(np.asarray(gs.goal, dtype=np.float64))
    m = list(gs.mask)
    return bool(np.max(np.abs(ns[..., m] - ng[..., m])) <= gs.eps)


def parse_grid(text: str) -> np.ndarray:
    """Parse a '#'/'.' drawing (top line first) into a bottom-up grid."""
    lines = [ln for ln in (l.rstrip() for l in text.strip("\n").splitlines()) if ln]
    if not lines:
        raise GridError("empty grid text")
    w = len(lines[0])
    rows = []
    for i, ln in enumerate(lines):
        if len(ln) != w:
            raise GridError(f"line {i} has length {len(ln)}, expected {w}")
        bad = set(ln) - {"#", "."}
        if bad:
            raise GridError(f"line {i} has invalid characters {sorted(bad)}")
        rows.append([1 if c == "#" else 0 for c in ln])
    return np.array(rows[::-1], dtype=np.uint8)


def format_grid(grid: np.ndarray) -> str:
    """Inverse of parse_grid (top line first)."""
    lines = ["".join("#" if c else "." for c in row) for row in grid[::-1]]
    return "\n".join(lines) + "\n"


_UMAZE = """
###################
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#......#####......#
#.................#
#.................#
#.................#
#.................#
#.................#
#.................#
###################
"""

_MEDIUM = """
#######################
#.....................#
#.....................#
#.....................#
#.....................#
#.....................#
#################.....#
#.....................#
#.....................#
#.....................#
#.....................#
#.....................#
#.....#################
#.....................#
#.....................#
#.....................#
#.....................#
#.....................#
#################.....#
#.....................#
#.....................#
#.....................#
#.....................#
#.....................#
#######################
"""

_LARGE = """
###########################
#.........................#
#.........................#
#.........................#
#.........................#
#.........................#
#####################.....#
#.........................#
#.........................#
#.........................#
#.........................#
#.........................#
#.....#####################
#.........................#
#.........................#
#.........................#
#.........................#
#.........................#
#####################.....#
#.........................#
#.........................#
#.........................#
#.........................#
#.........................#
#.....#####################
#.........................#
#.........................#
#.........................#
#.........................#
#.........................#
###########################
"""

# Layout worlds are scaled so shortest-step distances land in the horizon
# bands the package ships defaults for (see config.LAYOUTS). v_max=2.5 keeps
# the kinematic bound v_max*dt equal to the oracle lattice resolution
# cell_size/4 and lets demonstrations actually move near the bound.
_BUILTIN_TEXT = {"umaze": _UMAZE, "medium": _MEDIUM, "large": _LARGE}


def make_maze(name: str) -> MazeSpec:
    """Construct one of the built-in layouts."""
    if name not in _BUILTIN_TEXT:
        raise KeyError(f"unknown maze {name!r}, have {sorted(_BUILTIN_TEXT)}")
    return MazeSpec(
        name=name,
        grid=parse_grid(_BUILTIN_TEXT[name]),
        cell_size=0.2,
        dt=0.02,
        v_max=2.5,
        a_max=10.0,
    )


def builtin_names() -> list[str]:
    return list(_BUILTIN_TEXT)
