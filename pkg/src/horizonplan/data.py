"""Offline demonstration generation, normalization, and dataset files.

The behavior policy follows A* waypoints with a velocity-tracking PD
controller plus OU action noise, random pauses, and occasional detours, so
episodes reach their goals by suboptimal, variable-speed paths. Episodes
store the exact float32 states produced by maze.step, so replaying the
stored actions reproduces the stored states bitwise.
"""

import heapq
import struct
from dataclasses import dataclass, field

import numpy as np

from . import maze
from .maze import MazeSpec, POS, VEL

_MAGIC = b"MZTRAJ01"


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Normalizer:
    """Affine map into the unit box: positions from the maze bounds,
    velocities from [-v_max, v_max]. Dims with zero range get unit scale."""

    offset: np.ndarray  # (4,)
    scale: np.ndarray  # (4,)

    @classmethod
    def from_maze(cls, spec: MazeSpec) -> "Normalizer":
        lo, hi = spec.bounds
        offset = np.array([lo[0], lo[1], -spec.v_max, -spec.v_max], dtype=np.float64)
        scale = np.array(
            [hi[0] - lo[0], hi[1] - lo[1], 2 * spec.v_max, 2 * spec.v_max],
            dtype=np.float64,
        )
        scale[scale == 0] = 1.0
        return cls(offset=offset, scale=scale)

    def normalize(self, x):
        return (np.asarray(x) - self.offset) / self.scale

    def denormalize(self, x):
        return np.asarray(x) * self.scale + self.offset


def fit_normalizer(spec: MazeSpec, episodes=()) -> Normalizer:
    """Normalizer from the maze bounds and v_max; episodes are only sanity
    checked (they must already live inside the box)."""
    nz = Normalizer.from_maze(spec)
    for i, ep in enumerate(episodes):
        n = nz.normalize(ep.states.astype(np.float64))
        if n.min() < -1e-6 or n.max() > 1 + 1e-6:
            raise ValueError(f"episode {i} leaves the normalization box")
    return nz


@dataclass
class Episode:
    states: np.ndarray  # (T, 4) float32
    actions: np.ndarray  # (T-1, 2) float32
    maze_name: str

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        T = len(self.states)
        if T < 2:
            raise ValueError("episode needs at least 2 states")
        if self.states.shape != (T, 4) or self.actions.shape != (T - 1, 2):
            raise ValueError(
                f"bad episode shapes {self.states.shape} / {self.actions.shape}"
            )
        if not (np.isfinite(self.states).all() and np.isfinite(self.actions).all()):
            raise ValueError("episode contains non-finite values")

    def __len__(self):
        return len(self.states)


@dataclass
class SubTrajectory:
    states: np.ndarray  # (L, 4) float32
    episode_id: int
    start: int


def crop_random(ep: Episode, l_min: int, t_max: int, rng: np.random.Generator,
                episode_id: int = -1) -> SubTrajectory:
    """Uniform random window: L ~ U{l_min, min(T, t_max)}, start ~ U{0, T-L}."""
    T = len(ep)
    if T < l_min:
        raise ValueError(f"episode length {T} < l_min {l_min}")
    hi = min(T, t_max)
    L = int(rng.integers(l_min, hi + 1))
    i = int(rng.integers(0, T - L + 1))
    return SubTrajectory(states=ep.states[i:i + L].copy(), episode_id=episode_id, start=i)


def replay_max_error(spec: MazeSpec, ep: Episode) -> float:
    """Max abs difference between stored successors and re-stepped ones."""
    worst = 0.0
    for t in range(len(ep) - 1):
        s2 = maze.step(spec, ep.states[t], ep.actions[t])
        worst = max(worst, float(np.max(np.abs(s2 - ep.states[t + 1]))))
    return worst


# ---------------------------------------------------------------------------
# behavior policy

@dataclass
class BehaviorConfig:
    episodes: int = 2000
    max_steps: int = 800
    ou_theta: float = 0.15
    ou_sigma_scale: float = 0.3  # sigma = scale * a_max
    pause_prob: float = 0.02  # per step
    pause_len: tuple[int, int] = (5, 20)
    detour_prob: float = 0.3  # per episode
    follow_speed: float = 0.95  # cruise fraction of v_max
    speed_gain: float = 3.0  # desired speed per unit of waypoint distance
    accel_gain: float = 6.0
    capture_cells: float = 1.5  # waypoint advance radius, in cells
    goal_cells: float = 0.6  # episode termination radius, in cells
    clearance: float = 0.15
    min_path_cells: int = 3


_DIAG = 1.4142135623730951


def astar_cells(spec: MazeSpec, start: tuple[int, int], goal: tuple[int, int]):
    """8-connected A* over free cells (no corner cutting); returns the cell
    path including endpoints, or None if disconnected."""
    if spec.is_wall(*start) or spec.is_wall(*goal):
        return None
    sx, sy = start
    gx, gy = goal

    def h(x, y):
        dx, dy = abs(x - gx), abs(y - gy)
        return max(dx, dy) + (_DIAG - 1) * min(dx, dy)

    open_q = [(h(sx, sy), 0.0, start, None)]
    came = {}
    costs = {start: 0.0}
    while open_q:
        _, c, cur, parent = heapq.heappop(open_q)
        if cur in came:
            continue
        came[cur] = parent
        if cur == (gx, gy):
            path = [cur]
            while came[path[-1]] is not None:
                path.append(came[path[-1]])
            return path[::-1]
        x, y = cur
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = x + dx, y + dy
                if spec.is_wall(nx, ny):
                    continue
                if dx and dy and (spec.is_wall(x + dx, y) or spec.is_wall(x, y + dy)):
                    continue
                step_c = _DIAG if dx and dy else 1.0
                nc = c + step_c
                if nc < costs.get((nx, ny), np.inf):
                    costs[(nx, ny)] = nc
                    heapq.heappush(open_q, (nc + h(nx, ny), nc, (nx, ny), cur))
    return None


def _cell_center(spec, cell):
    return (np.asarray(cell, dtype=np.float64) + 0.5) * spec.cell_size


def generate_episode(spec: MazeSpec, cfg: BehaviorConfig,
                     rng: np.random.Generator) -> tuple[Episode, bool] | None:
    """One demonstration; returns (episode, completed) or None when the
    sampled endpoints are unusable (caller resamples)."""
    cells = spec.free_cells()
    start = tuple(cells[rng.integers(len(cells))])
    goal = tuple(cells[rng.integers(len(cells))])
    via = [start]
    if rng.random() < cfg.detour_prob:
        via.append(tuple(cells[rng.integers(len(cells))]))
    via.append(goal)

    path = []
    for a, b in zip(via[:-1], via[1:]):
        leg = astar_cells(spec, a, b)
        if leg is None:
            return None
        path.extend(leg if not path else leg[1:])
    if len(path) < cfg.min_path_cells:
        return None

    cs = spec.cell_size
    waypoints = np.array([_cell_center(spec, c) for c in path])
    goal_p = waypoints[-1]
    capture = cfg.capture_cells * cs
    goal_r = cfg.goal_cells * cs

    s = np.zeros(4, dtype=np.float32)
    u = rng.uniform(cfg.clearance, 1 - cfg.clearance, size=2)
    s[0] = (start[0] + u[0]) * cs
    s[1] = (start[1] + u[1]) * cs

    states = [s]
    actions = []
    ou = np.zeros(2)
    sigma = cfg.ou_sigma_scale * spec.a_max
    widx = 0
    pause = 0
    completed = False
    v_cap = cfg.follow_speed * spec.v_max
    for _ in range(cfg.max_steps):
        p = states[-1][POS].astype(np.float64)
        v = states[-1][VEL].astype(np.float64)
        while widx < len(waypoints) - 1 and np.linalg.norm(waypoints[widx] - p) <= capture:
            widx += 1
        if pause > 0:
            pause -= 1
            v_des = np.zeros(2)
        else:
            if rng.random() < cfg.pause_prob:
                pause = int(rng.integers(cfg.pause_len[0], cfg.pause_len[1] + 1))
            delta = waypoints[widx] - p
            dist = np.linalg.norm(delta)
            speed = min(v_cap, cfg.speed_gain * dist)
            v_des = delta / dist * speed if dist > 1e-9 else np.zeros(2)
        ou = ou + cfg.ou_theta * (-ou) + sigma * rng.standard_normal(2)
        a = cfg.accel_gain * (v_des - v) + ou
        a = np.clip(a, -spec.a_max, spec.a_max).astype(np.float32)
        s = maze.step(spec, states[-1], a)
        states.append(s)
        actions.append(a)
        if widx == len(waypoints) - 1 and np.linalg.norm(s[POS] - goal_p) <= goal_r:
            completed = True
            break
    if len(states) < 2:
        return None
    ep = Episode(states=np.array(states), actions=np.array(actions),
                 maze_name=spec.name)
    return ep, completed


def generate_dataset(spec: MazeSpec, cfg: BehaviorConfig, seed: int):
    """All episodes for a dataset; per-episode rng streams keep the result
    independent of generation order. Returns (episodes, stats)."""
    episodes = []
    completed = 0
    for i in range(cfg.episodes):
        for attempt in range(64):
            rng = np.random.default_rng(np.random.SeedSequence([seed, i, attempt]))
            out = generate_episode(spec, cfg, rng)
            if out is not None:
                ep, done = out
                episodes.append(ep)
                completed += int(done)
                break
        else:
            raise RuntimeError(f"could not generate episode {i}")
    lengths = np.array([len(e) for e in episodes])
    stats = {
        "episodes": len(episodes),
        "completed": completed,
        "capped": len(episodes) - completed,
        "mean_length": float(lengths.mean()),
        "max_length": int(lengths.max()),
    }
    return episodes, stats


# ---------------------------------------------------------------------------
# dataset files: fixed little-endian float32 container

def write_dataset(path, episodes: list[Episode]):
    if episodes and any(e.maze_name != episodes[0].maze_name for e in episodes):
        raise ValueError("all episodes in one file must share a maze")
    name = (episodes[0].maze_name if episodes else "").encode("utf-8")
    head = [
        _MAGIC,
        struct.pack("<IIII", 1, 4, 2, len(episodes)),
        struct.pack("<H", len(name)),
        name,
    ]
    index_pos = sum(len(c) for c in head)
    index_size = 12 * len(episodes)
    off = index_pos + index_size
    index = []
    for ep in episodes:
        T = len(ep)
        index.append(struct.pack("<QI", off, T))
        off += (T * 4 + (T - 1) * 2) * 4
    payload = []
    for ep in episodes:
        payload.append(np.ascontiguousarray(ep.states, dtype="<f4").tobytes())
        payload.append(np.ascontiguousarray(ep.actions, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(head + index + payload))


def read_dataset(path) -> list[Episode]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MAGIC:
        raise DatasetFormatError(f"bad magic {buf[:8]!r} at byte 0")
    try:
        version, d, m, count = struct.unpack_from("<IIII", buf, 8)
        if version != 1:
            raise DatasetFormatError(f"unsupported version {version} at byte 8")
        if d != 4 or m != 2:
            raise DatasetFormatError(f"unexpected dims d={d} m={m} at byte 12")
        (nlen,) = struct.unpack_from("<H", buf, 24)
        name = buf[26:26 + nlen].decode("utf-8")
        pos = 26 + nlen
        entries = []
        for i in range(count):
            off, T = struct.unpack_from("<QI", buf, pos)
            pos += 12
            entries.append((off, T))
    except struct.error as e:
        raise DatasetFormatError(f"truncated header at byte {len(buf)}") from e
    episodes = []
    for i, (off, T) in enumerate(entries):
        if T < 2:
            raise DatasetFormatError(f"episode {i}: invalid length {T}")
        ns = T * 4 * 4
        na = (T - 1) * 2 * 4
        if off + ns + na > len(buf):
            raise DatasetFormatError(
                f"episode {i}: truncated at byte {min(off + ns + na, len(buf))}"
            )
        states = np.frombuffer(buf, dtype="<f4", count=T * 4, offset=off).reshape(T, 4)
        actions = np.frombuffer(
            buf, dtype="<f4", count=(T - 1) * 2, offset=off + ns
        ).reshape(T - 1, 2)
        episodes.append(Episode(states=states.copy(), actions=actions.copy(),
                                maze_name=name))
    return episodes
