"""Shortest-step distance oracle: BFS on a lattice of free positions.

Nodes sit at sub-cell resolution r (default cell_size/4); edges connect
nodes whose displacement fits in one control step (|dp| <= v_max*dt,
l-inf by default to match the per-axis velocity clamp) and whose straight
segment stays out of walls. Hop counts lower-bound achievable step counts,
so the oracle is an optimistic surrogate for calibration, not equality.
"""

from collections import deque

import numpy as np

from .maze import MazeSpec, DEFAULT_GOAL_MASK

UNREACHABLE = float("inf")


class ReachGraph:
    def __init__(self, spec: MazeSpec, r: float | None = None, norm: str = "linf"):
        if norm not in ("linf", "l2"):
            raise ValueError(f"unknown displacement norm {norm!r}")
        self.spec = spec
        self.r = float(r) if r is not None else spec.cell_size / 4.0
        self.norm = norm
        self.delta = spec.v_max * spec.dt

        lo, hi = spec.bounds
        self.nx = int(np.floor((hi[0] - lo[0]) / self.r))
        self.ny = int(np.floor((hi[1] - lo[1]) / self.r))
        xs = (np.arange(self.nx) + 0.5) * self.r
        ys = (np.arange(self.ny) + 0.5) * self.r
        self.node_x = xs
        self.node_y = ys
        cx = np.minimum((xs // spec.cell_size).astype(int), spec.width - 1)
        cy = np.minimum((ys // spec.cell_size).astype(int), spec.height - 1)
        self._cell_x = cx
        self._cell_y = cy
        self.free = spec.grid[np.ix_(cy, cx)] == 0  # (ny, nx)

        # wall-count integral image for rectangle collision tests
        wall = (spec.grid != 0).astype(np.int32)
        self._wall_cum = np.pad(wall.cumsum(0).cumsum(1), ((1, 0), (1, 0)))

        self.dirs, self.passable = self._build_edges()
        self.labels = self._components()

    # -- construction -------------------------------------------------------

    def _rect_has_wall(self, cx0, cy0, cx1, cy1):
        """Vectorized: any wall cell inside [cx0..cx1]x[cy0..cy1]."""
        c = self._wall_cum
        return (
            c[cy1 + 1, cx1 + 1] - c[cy0, cx1 + 1] - c[cy1 + 1, cx0] + c[cy0, cx0]
        ) > 0

    def _build_edges(self):
        b = int(np.floor(self.delta / self.r + 1e-9))
        dirs = []
        for dj in range(-b, b + 1):
            for di in range(-b, b + 1):
                if di == 0 and dj == 0:
                    continue
                dp = np.array([di, dj]) * self.r
                length = np.max(np.abs(dp)) if self.norm == "linf" else np.linalg.norm(dp)
                if length <= self.delta + 1e-12:
                    dirs.append((di, dj))
        passable = {}
        cx = self._cell_x
        cy = self._cell_y
        for di, dj in dirs:
            ok = np.zeros((self.ny, self.nx), dtype=bool)
            i0 = slice(max(0, -di), self.nx - max(0, di))
            i1 = slice(max(0, di), self.nx - max(0, -di))
            j0 = slice(max(0, -dj), self.ny - max(0, dj))
            j1 = slice(max(0, dj), self.ny - max(0, -dj))
            both_free = self.free[j0, i0] & self.free[j1, i1]
            # conservative collision rule: every cell in the bounding box of
            # the two endpoints must be free (rules out corner cutting)
            ax0 = np.minimum(cx[i0], cx[i1])[None, :]
            ax1 = np.maximum(cx[i0], cx[i1])[None, :]
            ay0 = np.minimum(cy[j0], cy[j1])[:, None]
            ay1 = np.maximum(cy[j0], cy[j1])[:, None]
            clear = ~self._rect_has_wall(ax0, ay0, ax1, ay1)
            ok[j0, i0] = both_free & clear
            passable[(di, dj)] = ok
        return dirs, passable

    def _components(self):
        labels = np.full((self.ny, self.nx), -1, dtype=np.int32)
        next_label = 0
        for j, i in zip(*np.nonzero(self.free)):
            if labels[j, i] >= 0:
                continue
            q = deque([(i, j)])
            labels[j, i] = next_label
            while q:
                x, y = q.popleft()
                for di, dj in self.dirs:
                    if not self.passable[(di, dj)][y, x]:
                        continue
                    nx_, ny_ = x + di, y + dj
                    if labels[ny_, nx_] < 0:
                        labels[ny_, nx_] = next_label
                        q.append((nx_, ny_))
            next_label += 1
        return labels

    # -- queries -------------------------------------------------------------

    def node_of(self, p) -> tuple[int, int]:
        """Nearest free node (i, j) to world position p."""
        i = int(np.clip(round(p[0] / self.r - 0.5), 0, self.nx - 1))
        j = int(np.clip(round(p[1] / self.r - 0.5), 0, self.ny - 1))
        if self.free[j, i]:
            return i, j
        jj, ii = np.nonzero(self.free)
        d2 = (self.node_x[ii] - p[0]) ** 2 + (self.node_y[jj] - p[1]) ** 2
        k = int(np.argmin(d2))
        return int(ii[k]), int(jj[k])

    def same_component(self, p, q) -> bool:
        i0, j0 = self.node_of(p)
        i1, j1 = self.node_of(q)
        return self.labels[j0, i0] == self.labels[j1, i1]

    def _goal_nodes(self, g, eps, normalizer, mask):
        """Boolean (ny, nx): nodes whose masked normalized coords are within
        eps of g. Velocity dims match trivially at the node rest state."""
        ng = normalizer.normalize(np.asarray(g, dtype=np.float64))
        ok = self.free.copy()
        for dim in mask:
            if dim == 0:
                nx_ = (self.node_x - normalizer.offset[0]) / normalizer.scale[0]
                ok &= (np.abs(nx_ - ng[0]) <= eps)[None, :]
            elif dim == 1:
                ny_ = (self.node_y - normalizer.offset[1]) / normalizer.scale[1]
                ok &= (np.abs(ny_ - ng[1]) <= eps)[:, None]
            else:
                # nodes are rest states: velocity channel sits at the midpoint
                rest = (0.0 - normalizer.offset[dim]) / normalizer.scale[dim]
                if abs(rest - ng[dim]) > eps:
                    ok &= False
        return ok

    def distances_from(self, start_node, t_max=None):
        """Hop distances from one node to every node (-1 where unreached)."""
        dist = np.full((self.ny, self.nx), -1, dtype=np.int32)
        i, j = start_node
        dist[j, i] = 0
        frontier = np.zeros_like(self.free)
        frontier[j, i] = True
        hops = 0
        while frontier.any():
            if t_max is not None and hops >= t_max:
                break
            nxt = np.zeros_like(frontier)
            for di, dj in self.dirs:
                src = frontier & self.passable[(di, dj)]
                shifted = np.zeros_like(frontier)
                j0 = slice(max(0, dj), self.ny - max(0, -dj))
                i0 = slice(max(0, di), self.nx - max(0, -di))
                j1 = slice(max(0, -dj), self.ny - max(0, dj))
                i1 = slice(max(0, -di), self.nx - max(0, di))
                shifted[j0, i0] = src[j1, i1]
                nxt |= shifted
            nxt &= dist < 0
            hops += 1
            dist[nxt] = hops
            frontier = nxt
        return dist


def shortest_steps(graph: ReachGraph, s, g, eps: float, t_max: int,
                   normalizer, mask=DEFAULT_GOAL_MASK) -> float:
    """Oracle distance: BFS hops from the node nearest s to the eps-box of
    g, capped at t_max; UNREACHABLE if no connected goal node exists."""
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    ns = normalizer.normalize(s)
    ng = normalizer.normalize(g)
    m = list(mask)
    if np.max(np.abs(ns[m] - ng[m])) <= eps:
        return 0
    goal_mask = graph._goal_nodes(g, eps, normalizer, mask)
    if not goal_mask.any():
        return UNREACHABLE
    start = graph.node_of(s)
    lbl = graph.labels[start[1], start[0]]
    if not (graph.labels[goal_mask] == lbl).any():
        return UNREACHABLE
    dist = graph.distances_from(start, t_max=t_max)
    hit = dist[goal_mask]
    hit = hit[hit >= 0]
    if hit.size == 0:
        return t_max  # reachable but beyond the cap
    return int(hit.min())


def node_hops(graph: ReachGraph, a, b) -> float:
    """Pure graph metric between two nodes (for invariant checks)."""
    dist = graph.distances_from(a)
    d = dist[b[1], b[0]]
    return UNREACHABLE if d < 0 else int(d)


def oracle_table(graph: ReachGraph, pairs, eps: float, t_max: int,
                 normalizer, mask=DEFAULT_GOAL_MASK) -> np.ndarray:
    """Vector of shortest_steps over (start, goal) pairs."""
    return np.array([
        shortest_steps(graph, s, g, eps, t_max, normalizer, mask=mask)
        for s, g in pairs
    ], dtype=np.float64)
