"""Frontier exploration and per-step action planning on distance fields.

Goal selection for the object-finding phase follows three rules in strict
precedence: (1) cells where the target object and its start receptacle
co-occur in the map, (2) start-receptacle cells outside a 1 m band around
already-visited locations, (3) the frontier cell closest to the robot in
geodesic distance. The receptacle-finding phase uses goal-receptacle cells,
else the frontier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MapBoundsError, PlanningError
from .fmm import DistanceField, fmm_distance_field
from .geometry import CROSS, chebyshev_dilate, euclidean_disk, wrap_angle
from .mapping import SemanticMap
from .robot import FORWARD_STEP, TURN_INCREMENT, DiscreteMove, Waypoint

TASK_FIND_OBJECT = "find_object"
TASK_FIND_RECEPTACLE = "find_receptacle"

RULE_COOCCURRENCE = "object_cooccurrence"
RULE_START_RECEPTACLE = "start_receptacle"
RULE_FRONTIER = "frontier"
RULE_GOAL_RECEPTACLE = "goal_receptacle"

PAST_EXCLUSION_RADIUS = 1.0  # m around visited locations, rule 2
DEFAULT_STOP_RADIUS = 0.65  # m, agent-side arrival heuristic

DISCRETE = "discrete"
CONTINUOUS = "continuous"


@dataclass
class NavGoalDecision:
    rule_used: str
    goal_cells: np.ndarray  # (k, 2) int cells, nonempty

    def __post_init__(self):
        self.goal_cells = np.asarray(self.goal_cells,
                                     dtype=np.int64).reshape(-1, 2)
        if self.goal_cells.shape[0] == 0:
            raise ValueError("goal_cells must be nonempty")


def traversable_grid(smap: SemanticMap, robot_radius: float) -> np.ndarray:
    """Free cells for planning: observed obstacles dilated by the robot
    radius; unexplored space counts as free (optimistic exploration)."""
    r = int(np.ceil(robot_radius / smap.config.cell_size))
    return ~chebyshev_dilate(smap.grid[smap.OBSTACLES], r)


def frontier_cells(smap: SemanticMap,
                   traversable: np.ndarray | None = None) -> np.ndarray:
    """Explored traversable cells 4-adjacent to unexplored space, row-major."""
    explored = smap.grid[smap.EXPLORED]
    if traversable is None:
        traversable = traversable_grid(smap, 0.0)
    unexplored_adjacent = ndimage.binary_dilation(~explored, structure=CROSS)
    frontier = explored & traversable & unexplored_adjacent
    return np.argwhere(frontier)


def _free_robot_cell(traversable: np.ndarray, cell: tuple[int, int],
                     radius: int = 5) -> np.ndarray:
    """Copy of the grid with a free bubble around the robot cell.

    Backprojection jitter and collision stamps can wrap the robot's own cell
    into the dilated obstacle region; the robot is demonstrably standing
    there, so its own footprint stays traversable for planning.
    """
    out = traversable.copy()
    i, j = cell
    out[max(i - radius, 0):i + radius + 1,
        max(j - radius, 0):j + radius + 1] = True
    return out


def select_frontier_goal(smap: SemanticMap, robot_cell: tuple[int, int],
                         traversable: np.ndarray | None = None,
                         ) -> tuple[int, int]:
    """Frontier cell with minimum geodesic distance from the robot.

    Ties break row-major. Raises PlanningError("exploration exhausted")
    when no frontier remains.
    """
    if traversable is None:
        traversable = traversable_grid(smap, 0.0)
    frontier = frontier_cells(smap, traversable)
    if frontier.shape[0] == 0:
        raise PlanningError("exploration exhausted")
    trav = _free_robot_cell(traversable, robot_cell)
    # Expanding from the robot, the first frontier cell accepted is the
    # geodesic argmin; heap ties pop in row-major cell order.
    field = fmm_distance_field(trav, [robot_cell],
                               cell_size=smap.config.cell_size,
                               watch_cells=frontier, watch_margin=0.0,
                               first_watch=True)
    d = field.values[frontier[:, 0], frontier[:, 1]]
    if not np.isfinite(d).any():
        raise PlanningError("exploration exhausted")
    k = int(np.argmin(d))
    return (int(frontier[k, 0]), int(frontier[k, 1]))


def past_exclusion_mask(smap: SemanticMap) -> np.ndarray:
    """Cells within PAST_EXCLUSION_RADIUS of any visited location."""
    r = PAST_EXCLUSION_RADIUS / smap.config.cell_size
    disk = euclidean_disk(r)
    out = np.zeros_like(smap.grid[smap.PAST])
    m = out.shape[0]
    rad = disk.shape[0] // 2
    for i, j in np.argwhere(smap.grid[smap.PAST]):
        i0, j0 = max(i - rad, 0), max(j - rad, 0)
        i1, j1 = min(i + rad + 1, m), min(j + rad + 1, m)
        out[i0:i1, j0:j1] |= disk[i0 - i + rad:i1 - i + rad,
                                  j0 - j + rad:j1 - j + rad]
    return out


def select_nav_goal(smap: SemanticMap, task_phase: str,
                    robot_cell: tuple[int, int], goal_spec: dict,
                    traversable: np.ndarray | None = None,
                    ) -> NavGoalDecision:
    """Pick navigation goal cells for the current task phase.

    Exactly one rule fires; precedence is total and deterministic.
    """
    if traversable is None:
        traversable = traversable_grid(smap, 0.0)
    if task_phase == TASK_FIND_OBJECT:
        obj = smap.category_mask(goal_spec["object_category"])
        start = smap.category_mask(goal_spec["start_receptacle_category"])
        both = obj & start
        if both.any():
            return NavGoalDecision(RULE_COOCCURRENCE, np.argwhere(both))
        fresh = start & ~past_exclusion_mask(smap)
        if fresh.any():
            return NavGoalDecision(RULE_START_RECEPTACLE, np.argwhere(fresh))
    elif task_phase == TASK_FIND_RECEPTACLE:
        goal = smap.category_mask(goal_spec["goal_receptacle_category"])
        if goal.any():
            return NavGoalDecision(RULE_GOAL_RECEPTACLE, np.argwhere(goal))
    else:
        raise ValueError(f"unknown task phase {task_phase!r}")
    cell = select_frontier_goal(smap, robot_cell, traversable)
    return NavGoalDecision(RULE_FRONTIER, np.array([cell]))


def project_goals(goal_cells: np.ndarray,
                  traversable: np.ndarray) -> np.ndarray:
    """Move goal cells trapped in the obstacle dilation onto the nearest
    traversable cell (deduplicated, row-major order)."""
    goal_cells = np.asarray(goal_cells, dtype=np.int64).reshape(-1, 2)
    ok = traversable[goal_cells[:, 0], goal_cells[:, 1]]
    if ok.all():
        return goal_cells
    _, (ni, nj) = ndimage.distance_transform_edt(
        ~traversable, return_indices=True)
    moved = goal_cells.copy()
    bad = ~ok
    moved[bad, 0] = ni[goal_cells[bad, 0], goal_cells[bad, 1]]
    moved[bad, 1] = nj[goal_cells[bad, 0], goal_cells[bad, 1]]
    flat = moved[:, 0] * traversable.shape[1] + moved[:, 1]
    _, keep = np.unique(flat, return_index=True)
    return moved[np.sort(keep)]


def goal_field(smap: SemanticMap, decision: NavGoalDecision,
               traversable: np.ndarray, robot_cell: tuple[int, int],
               watch_margin: float = 0.6) -> DistanceField:
    """Distance field toward the decision's goal cells, solved just far
    enough to cover the robot's neighborhood."""
    trav = _free_robot_cell(traversable, robot_cell)
    goals = project_goals(decision.goal_cells, trav)
    return fmm_distance_field(trav, goals, cell_size=smap.config.cell_size,
                              watch_cells=[robot_cell],
                              watch_margin=watch_margin)


def _cell_at(smap: SemanticMap, x: float, y: float) -> tuple[int, int]:
    return smap.cell_of_map_point(x, y)


def plan_step(field: DistanceField, smap: SemanticMap,
              pose: tuple[float, float, float], action_space: str,
              traversable: np.ndarray):
    """One greedy descent action on the distance field.

    Discrete space: pick among forward / turn_left / turn_right the action
    whose (post-turn) forward destination cell has the lowest field value,
    forward preferred on ties. Continuous space: a waypoint along the
    steepest-descent cell chain, up to 0.5 m ahead.
    """
    x, y, yaw = pose
    ci, cj = _cell_at(smap, x, y)
    here = field.values[ci, cj]
    if not np.isfinite(here):
        raise PlanningError("goal unreachable")

    if action_space == DISCRETE:
        candidates = (
            (DiscreteMove("forward"), yaw),
            (DiscreteMove("turn_left"), yaw + TURN_INCREMENT),
            (DiscreteMove("turn_right"), yaw - TURN_INCREMENT),
        )
        best = None
        best_v = np.inf
        for action, heading in candidates:
            tx = x + np.cos(heading) * FORWARD_STEP
            ty = y + np.sin(heading) * FORWARD_STEP
            try:
                ti, tj = _cell_at(smap, tx, ty)
            except MapBoundsError:
                continue
            if not _sweep_clear(traversable, smap, x, y, tx, ty):
                continue
            v = field.values[ti, tj]
            if v < best_v:
                best, best_v = action, v
        if best is None or best_v == np.inf:
            # Boxed in by the dilation: rotate in place, the map will evolve.
            return DiscreteMove("turn_left")
        return best

    # Continuous: walk the steepest-descent chain of 4-neighbors.
    max_cells = int(round(0.5 / smap.config.cell_size))
    i, j = ci, cj
    for _ in range(max_cells):
        ni, nj, nv = i, j, field.values[i, j]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < field.values.shape[0] and 0 <= b < field.values.shape[1]:
                if field.values[a, b] < nv:
                    ni, nj, nv = a, b, field.values[a, b]
        if (ni, nj) == (i, j):
            break
        i, j = ni, nj
    if (i, j) == (ci, cj):
        return Waypoint(0.0, 0.0, TURN_INCREMENT)
    gx, gy = smap.cell_center_map(i, j)
    dxw, dyw = gx - x, gy - y
    c, s = np.cos(-yaw), np.sin(-yaw)
    dx_r = c * dxw - s * dyw
    dy_r = s * dxw + c * dyw
    dyaw = wrap_angle(np.arctan2(dyw, dxw) - yaw)
    return Waypoint(float(dx_r), float(dy_r), float(dyaw))


def _sweep_clear(traversable: np.ndarray, smap: SemanticMap,
                 x0: float, y0: float, x1: float, y1: float) -> bool:
    h = smap.config.cell_size
    length = float(np.hypot(x1 - x0, y1 - y0))
    n = max(int(np.ceil(length / (h / 2))), 1)
    for k in range(1, n + 1):
        t = k / n
        try:
            i, j = smap.cell_of_map_point(x0 + t * (x1 - x0),
                                          y0 + t * (y1 - y0))
        except MapBoundsError:
            return False
        if not traversable[i, j]:
            return False
    return True


def nav_stop_condition(smap: SemanticMap, pose: tuple[float, float, float],
                       decision: NavGoalDecision, goal_visible: bool,
                       stop_radius: float = DEFAULT_STOP_RADIUS) -> bool:
    """Arrived: within stop radius of a non-frontier goal cell while the
    goal category is visible in the latest observation. Frontier goals are
    intermediate and never trigger a stop."""
    if decision.rule_used == RULE_FRONTIER:
        return False
    if not goal_visible:
        return False
    x, y, _ = pose
    centers = np.array([smap.cell_center_map(int(i), int(j))
                        for i, j in decision.goal_cells])
    d = np.hypot(centers[:, 0] - x, centers[:, 1] - y)
    return bool(d.min() <= stop_radius)
