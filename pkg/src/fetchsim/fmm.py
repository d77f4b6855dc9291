"""Multi-source Eikonal distance fields on a uniform grid.

Solves |grad d| = 1 with the first-order upwind discretization on the
4-connected stencil (binary speed: 1 on traversable cells, 0 on obstacles),
expanding a narrow band in Dijkstra order. Obstacle and unreachable cells
hold +inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PlanningError
from .geometry import CELL_SIZE

FAR, NARROW, KNOWN = 0, 1, 2


@njit(cache=True)
def _solve_quadratic(a: float, b: float, h: float) -> float:
    # a, b: smallest accepted neighbor value along x and y (inf if none).
    if a > b:
        a, b = b, a
    if b == np.inf:
        return a + h
    if b - a >= h:
        return a + h
    return 0.5 * (a + b + np.sqrt(2.0 * h * h - (a - b) * (a - b)))


@njit(cache=True)
def _fmm_kernel(trav, goal_i, goal_j, h, watch, margin, first_watch):
    # watch: flat cell indices; once all are KNOWN the band only grows by
    # `margin` more meters before the solve stops (partial field). An empty
    # watch array solves the full grid. With first_watch the solve stops as
    # soon as ANY watch cell is accepted (plus margin), which makes the
    # argmin over the watch set recoverable from the partial field.
    ny, nx = trav.shape
    n = ny * nx
    d = np.full(n, np.inf)
    state = np.zeros(n, dtype=np.uint8)
    watch_left = watch.shape[0]
    stop_at = np.inf

    cap = 6 * n + 16
    heap_d = np.empty(cap, dtype=np.float64)
    heap_v = np.empty(cap, dtype=np.int64)
    size = 0

    def push(size, key, val):
        heap_d[size] = key
        heap_v[size] = val
        i = size
        while i > 0:
            p = (i - 1) >> 1
            if heap_d[p] > heap_d[i] or (heap_d[p] == heap_d[i]
                                         and heap_v[p] > heap_v[i]):
                heap_d[p], heap_d[i] = heap_d[i], heap_d[p]
                heap_v[p], heap_v[i] = heap_v[i], heap_v[p]
                i = p
            else:
                break
        return size + 1

    def pop(size):
        key = heap_d[0]
        val = heap_v[0]
        size -= 1
        heap_d[0] = heap_d[size]
        heap_v[0] = heap_v[size]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < size and (heap_d[l] < heap_d[m] or (heap_d[l] == heap_d[m]
                                                       and heap_v[l] < heap_v[m])):
                m = l
            if r < size and (heap_d[r] < heap_d[m] or (heap_d[r] == heap_d[m]
                                                       and heap_v[r] < heap_v[m])):
                m = r
            if m == i:
                break
            heap_d[m], heap_d[i] = heap_d[i], heap_d[m]
            heap_v[m], heap_v[i] = heap_v[i], heap_v[m]
            i = m
        return size, key, val

    for k in range(goal_i.shape[0]):
        v = goal_i[k] * nx + goal_j[k]
        if trav[goal_i[k], goal_j[k]] and d[v] != 0.0:
            d[v] = 0.0
            state[v] = NARROW
            size = push(size, 0.0, v)

    while size > 0:
        size, key, v = pop(size)
        if state[v] == KNOWN:
            continue
        if key > stop_at:
            # Provisional narrow-band values are not final; blank them so the
            # partial field is exact wherever it is finite.
            for u in range(n):
                if state[u] != KNOWN:
                    d[u] = np.inf
            break
        state[v] = KNOWN
        if watch_left > 0:
            for k in range(watch.shape[0]):
                if watch[k] == v:
                    watch_left = 0 if first_watch else watch_left - 1
                    break
            if watch_left == 0:
                stop_at = key + margin
        vi = v // nx
        vj = v % nx
        for k in range(4):
            if k == 0:
                ui, uj = vi - 1, vj
            elif k == 1:
                ui, uj = vi + 1, vj
            elif k == 2:
                ui, uj = vi, vj - 1
            else:
                ui, uj = vi, vj + 1
            if ui < 0 or uj < 0 or ui >= ny or uj >= nx:
                continue
            if not trav[ui, uj]:
                continue
            u = ui * nx + uj
            if state[u] == KNOWN:
                continue
            a = np.inf
            if uj > 0 and state[u - 1] == KNOWN:
                a = d[u - 1]
            if uj < nx - 1 and state[u + 1] == KNOWN and d[u + 1] < a:
                a = d[u + 1]
            b = np.inf
            if ui > 0 and state[u - nx] == KNOWN:
                b = d[u - nx]
            if ui < ny - 1 and state[u + nx] == KNOWN and d[u + nx] < b:
                b = d[u + nx]
            new = _solve_quadratic(a, b, h)
            if new < d[u]:
                d[u] = new
                state[u] = NARROW
                size = push(size, new, u)

    return d.reshape(ny, nx)


@dataclass
class DistanceField:
    values: np.ndarray  # meters; +inf on obstacles / unreachable cells
    goal_cells: list[tuple[int, int]]
    cell_size: float = CELL_SIZE

    def at_cell(self, i: int, j: int) -> float:
        return float(self.values[i, j])

    def at_point(self, x: float, y: float) -> float:
        i = int(np.floor(y / self.cell_size))
        j = int(np.floor(x / self.cell_size))
        if not (0 <= i < self.values.shape[0] and 0 <= j < self.values.shape[1]):
            return float("inf")
        return float(self.values[i, j])


def fmm_distance_field(traversable: np.ndarray,
                       goal_cells: list[tuple[int, int]] | np.ndarray,
                       cell_size: float = CELL_SIZE,
                       watch_cells=None,
                       watch_margin: float = 0.5,
                       first_watch: bool = False) -> DistanceField:
    """Distance field from a set of goal cells over traversable cells.

    Goal cells falling on obstacles are ignored; if none remains the field
    is unsolvable and a PlanningError is raised.

    ``watch_cells`` trades completeness for speed: the solve stops once all
    watch cells have been accepted plus ``watch_margin`` meters of band. The
    returned field is exact wherever it is finite up to that horizon; with
    the default ``watch_cells=None`` the full grid is solved.
    """
    goals = np.asarray(goal_cells, dtype=np.int64).reshape(-1, 2)
    if goals.shape[0] == 0:
        raise ValueError("goal_cells must be nonempty")
    trav = np.ascontiguousarray(traversable.astype(np.bool_))
    gi = goals[:, 0].copy()
    gj = goals[:, 1].copy()
    inb = (gi >= 0) & (gi < trav.shape[0]) & (gj >= 0) & (gj < trav.shape[1])
    if not np.any(inb & trav[np.clip(gi, 0, trav.shape[0] - 1),
                             np.clip(gj, 0, trav.shape[1] - 1)]):
        raise PlanningError("all goal cells lie on obstacles")
    if watch_cells is None:
        watch = np.empty(0, dtype=np.int64)
        margin = np.inf
    else:
        w = np.asarray(watch_cells, dtype=np.int64).reshape(-1, 2)
        watch = w[:, 0] * trav.shape[1] + w[:, 1]
        margin = float(watch_margin)
    values = _fmm_kernel(trav, gi[inb], gj[inb], float(cell_size),
                         watch, margin, first_watch)
    return DistanceField(values, [(int(i), int(j)) for i, j in goals],
                         cell_size)
