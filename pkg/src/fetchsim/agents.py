"""Built-in heuristic agent: mapping + exploration + gaze + grasp + place.

The agent sequences skills in a fixed order. Navigation skills build the
semantic map, choose goals by the three-rule policy, and descend fast
marching distance fields; arrival is refined onto a reconstructed viewpoint
lattice around the mapped receptacle. The gaze skill centers the target and
closes to arm's reach before the snap grasp; the place skill approaches the
goal receptacle, picks a flat spot, and lowers the object onto it from
manipulation mode.

Phases only move forward, with one documented exception: losing the target
during gaze falls back to object finding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import robot as rb
from .camera import Observation
from .errors import FetchSimError, MapBoundsError, PlanningError, WorkspaceError
from .geometry import wrap_angle
from .grasping import (
    PointCloud,
    cloud_from_observation,
    estimate_placement_point,
    reach_for_point,
    score_grasps,
)
from .mapping import DEFAULT_MAP_CELLS, MapConfig, SemanticMap, update_map
from .planning import (
    CONTINUOUS,
    DISCRETE,
    RULE_FRONTIER,
    TASK_FIND_OBJECT,
    TASK_FIND_RECEPTACLE,
    NavGoalDecision,
    frontier_cells,
    goal_field,
    nav_stop_condition,
    plan_step,
    select_frontier_goal,
    select_nav_goal,
    traversable_grid,
)
from .seeding import rng_from

# Skill phases, in execution order.
PHASE_FIND_OBJECT = "find_object"
PHASE_GAZE = "gaze"
PHASE_GRASP = "grasp"
PHASE_FIND_RECEPTACLE = "find_receptacle"
PHASE_PLACE = "place"
PHASE_DONE = "done"
PHASE_FAILED = "failed"

VIEWPOINT_SPACING = 0.25
VIEWPOINT_BAND = (0.40, 1.30)  # stay clear of the 0.3/1.5 ring edges


@dataclass
class AgentConfig:
    action_space: str = CONTINUOUS
    robot_radius: float = 0.25
    map_cells: int = DEFAULT_MAP_CELLS
    stop_radius: float = 0.65
    handoff_radius: float = 1.5  # begin viewpoint approach within this range
    use_gaze: bool = True  # False: skip straight from approach to grasp
    gaze_lost_limit: int = 20
    gaze_range: float = 0.6  # approach until estimated range drops below
    grasp_range: float = 0.8
    grasp_candidate_retries: int = 3
    place_approach: float = 0.385
    release_clearance: float = 0.05
    settle_wait: int = 50
    scan_limit: int = 24  # in-place scan budget before giving up a search
    seed: int = 0


@dataclass
class SkillPhase:
    name: str
    entered_at_step: int


class HeuristicAgent:
    """Deterministic observation-to-action policy for one episode."""

    def __init__(self, config: AgentConfig | None = None,
                 categories: list[str] | None = None):
        self.config = config or AgentConfig()
        self._categories = categories
        self._reset_done = False

    # -- lifecycle ----------------------------------------------------------

    def reset(self, goal_spec: dict, categories: list[str],
              episode_seed: int = 0) -> None:
        cfg = self.config
        self.goal_spec = dict(goal_spec)
        self.map = SemanticMap(MapConfig(categories=list(categories),
                                         cells=cfg.map_cells))
        self.rng = rng_from("agent", cfg.seed, episode_seed)
        self.phase = SkillPhase(PHASE_FIND_OBJECT, 0)
        self.phase_log: list[SkillPhase] = [self.phase]
        self._decision: NavGoalDecision | None = None
        self._approach_point: tuple[float, float] | None = None
        self._approach_queue: list[tuple[float, float]] = []
        self._approach_face: tuple[float, float] | None = None
        self._approach_last: tuple[float, float] | None = None
        self._verify_tilts = [-0.15, -0.35, -0.55]
        self._gaze_lost = 0
        self._gaze_backoffs = 0
        self._grasp_attempts = 0
        self._scan_steps = 0
        self._exhausted_scans = 0
        self._place_stage = "aim"
        self._place_point: tuple[float, float, float] | None = None
        self._arm_plan: list[rb.Action] = []
        self._settle_left = cfg.settle_wait
        self._fail_reason = ""
        self._stop_sent = False
        self._last_pose: tuple[float, float, float] | None = None
        self._last_motion_dir: float | None = None
        self._stalled = False
        self._trav_cache: tuple[int, np.ndarray] | None = None
        self._searched = np.zeros((cfg.map_cells, cfg.map_cells), dtype=bool)
        self._approach_component: np.ndarray | None = None
        self._pose_window: list[tuple[float, float]] = []
        self._reset_done = True

    def _traversable(self) -> np.ndarray:
        # Obstacle bits never clear, so the count keys the dilation cache.
        count = int(self.map.grid[self.map.OBSTACLES].sum())
        if self._trav_cache is not None and self._trav_cache[0] == count:
            return self._trav_cache[1]
        grid = traversable_grid(self.map, self.config.robot_radius)
        self._trav_cache = (count, grid)
        return grid

    def _transition(self, name: str, step: int) -> None:
        self.phase = SkillPhase(name, step)
        self.phase_log.append(self.phase)
        self._decision = None
        self._approach_point = None
        self._scan_steps = 0

    def fail(self, reason: str, step: int) -> None:
        self._fail_reason = reason
        self._transition(PHASE_FAILED, step)

    # -- helpers -------------------------------------------------------------

    def _pose(self, obs: Observation) -> tuple[float, float, float]:
        return obs.base_pose_rel_start

    def _robot_cell(self, obs: Observation) -> tuple[int, int]:
        x, y, _ = self._pose(obs)
        return self.map.cell_of_map_point(x, y)

    def _visible_category_ids(self, obs: Observation, category: str) -> set[int]:
        return {i for i, c in sorted(obs.detections.items()) if c == category}

    def _category_pixels(self, obs: Observation, category: str) -> int:
        ids = self._visible_category_ids(obs, category)
        if not ids:
            return 0
        counts = obs.pixel_counts()
        return sum(counts.get(i, 0) for i in ids)

    def _pixels_needed(self, obs: Observation) -> int:
        return int(np.ceil(0.001 * obs.camera.pixels))

    def _target_centroid(self, obs: Observation,
                         category: str) -> tuple[float, float, float] | None:
        """(column, row, range) of the nearest visible instance centroid."""
        ids = self._visible_category_ids(obs, category)
        if not ids:
            return None
        sem = np.asarray(obs.semantic)
        depth = np.asarray(obs.depth)
        best = None
        for inst in sorted(ids):
            mask = sem == inst
            if not mask.any():
                continue
            rng_est = float(np.median(depth[mask]))
            if best is None or rng_est < best[2]:
                vs, us = np.nonzero(mask)
                best = (float(us.mean()), float(vs.mean()), rng_est)
        return best

    # -- navigation ----------------------------------------------------------

    def _nav_task(self) -> str:
        return (TASK_FIND_OBJECT if self.phase.name == PHASE_FIND_OBJECT
                else TASK_FIND_RECEPTACLE)

    def _goal_category(self) -> str:
        return (self.goal_spec["object_category"]
                if self.phase.name == PHASE_FIND_OBJECT
                else self.goal_spec["goal_receptacle_category"])

    def _select_goal(self, obs: Observation,
                     traversable: np.ndarray) -> NavGoalDecision:
        cell = self._robot_cell(obs)
        decision = select_nav_goal(self.map, self._nav_task(), cell,
                                   self.goal_spec, traversable)
        if decision.rule_used != RULE_FRONTIER:
            return decision
        # Keep the previous frontier goal while it stays on the frontier;
        # reselecting the argmin every step thrashes without helping.
        if (self._decision is not None
                and self._decision.rule_used == RULE_FRONTIER):
            gi, gj = self._decision.goal_cells[0]
            fr = frontier_cells(self.map, traversable)
            if fr.size and ((fr[:, 0] == gi) & (fr[:, 1] == gj)).any():
                return self._decision
        return decision

    def _nav_step(self, obs: Observation) -> rb.Action:
        traversable = self._traversable()
        cell = self._robot_cell(obs)
        try:
            decision = self._select_goal(obs, traversable)
        except PlanningError:
            # A fresh map may have no frontier yet (everything seen so far
            # sits inside the obstacle dilation). Scan a full turn before
            # declaring the search exhausted.
            if self._exhausted_scans < self.config.scan_limit:
                self._exhausted_scans += 1
                return self._scan(obs)
            self.fail("exploration exhausted", obs.step_count)
            return self._act_failed()
        # Skip receptacles already searched without finding the goal; when
        # nothing else remains, fall back to the frontier.
        if decision.rule_used in ("start_receptacle", "goal_receptacle"):
            keep = ~self._searched[decision.goal_cells[:, 0],
                                   decision.goal_cells[:, 1]]
            if keep.any():
                decision = NavGoalDecision(decision.rule_used,
                                           decision.goal_cells[keep])
            else:
                try:
                    fcell = select_frontier_goal(self.map, cell, traversable)
                    decision = NavGoalDecision(RULE_FRONTIER,
                                               np.array([fcell]))
                except PlanningError:
                    if self._exhausted_scans < self.config.scan_limit:
                        self._exhausted_scans += 1
                        return self._scan(obs)
                    self.fail("exploration exhausted", obs.step_count)
                    return self._act_failed()
        self._exhausted_scans = 0
        self._decision = decision

        # Rule 1 hands off on seeing the object; the receptacle rules hand
        # off on seeing the receptacle they navigate to.
        if decision.rule_used == "object_cooccurrence":
            stop_cat = self.goal_spec["object_category"]
        elif decision.rule_used == "start_receptacle":
            stop_cat = self.goal_spec["start_receptacle_category"]
        else:
            stop_cat = self.goal_spec["goal_receptacle_category"]
        visible = self._category_pixels(obs, stop_cat) > 0
        if nav_stop_condition(self.map, self._pose(obs), decision, visible,
                              self.config.handoff_radius):
            return self._begin_approach(obs, decision)

        try:
            field = goal_field(self.map, decision, traversable, cell)
            return plan_step(field, self.map, self._pose(obs),
                             self.config.action_space, traversable)
        except PlanningError:
            # Goal unreachable through current dilation; fall back to the
            # frontier and keep moving.
            try:
                fcell = select_frontier_goal(self.map, cell, traversable)
            except PlanningError:
                if self._exhausted_scans < self.config.scan_limit:
                    self._exhausted_scans += 1
                    return self._scan(obs)
                self.fail("exploration exhausted", obs.step_count)
                return self._act_failed()
            decision = NavGoalDecision(RULE_FRONTIER, np.array([fcell]))
            self._decision = decision
            field = goal_field(self.map, decision, traversable, cell)
            return plan_step(field, self.map, self._pose(obs),
                             self.config.action_space, traversable)

    # -- viewpoint approach ----------------------------------------------------

    def _receptacle_component(self, decision: NavGoalDecision,
                              category: str) -> np.ndarray | None:
        mask = np.asarray(self.map.category_mask(category))
        if not mask.any():
            return None
        labels, _ = ndimage.label(mask)
        gi, gj = decision.goal_cells[0]
        lbl = labels[gi, gj]
        if lbl == 0:
            # Goal cell off the channel (e.g. projected); take the nearest
            # labeled cell.
            cells = np.argwhere(mask)
            k = int(np.argmin(np.abs(cells[:, 0] - gi) + np.abs(cells[:, 1] - gj)))
            lbl = labels[cells[k, 0], cells[k, 1]]
        return np.argwhere(labels == lbl)

    def _lattice_candidates(self, component: np.ndarray,
                            obs: Observation) -> list[tuple[float, float]]:
        """Reconstruct likely viewpoint lattice points around a mapped
        receptacle: estimate the footprint rectangle (center + axes), then
        enumerate ring points on the 0.25 m lattice those axes carry."""
        pts = np.array([self.map.cell_center_map(int(i), int(j))
                        for i, j in component])
        center = pts.mean(axis=0)
        rel = pts - center
        best_theta, best_area = 0.0, np.inf
        for theta in np.deg2rad(np.arange(0.0, 90.0, 2.0)):
            c, s = np.cos(theta), np.sin(theta)
            u = rel[:, 0] * c + rel[:, 1] * s
            v = -rel[:, 0] * s + rel[:, 1] * c
            area = (u.max() - u.min()) * (v.max() - v.min())
            if area < best_area - 1e-12:
                best_theta, best_area = theta, area
        c, s = np.cos(best_theta), np.sin(best_theta)
        u = rel[:, 0] * c + rel[:, 1] * s
        v = -rel[:, 0] * s + rel[:, 1] * c
        half_w = (u.max() - u.min()) / 2 + self.map.config.cell_size / 2
        half_h = (v.max() - v.min()) / 2 + self.map.config.cell_size / 2
        u0 = (u.max() + u.min()) / 2
        v0 = (v.max() + v.min()) / 2

        traversable = self._traversable()
        x, y, _ = self._pose(obs)
        lo, hi = VIEWPOINT_BAND
        out = []
        n = int(np.ceil((hi + max(half_w, half_h)) / VIEWPOINT_SPACING)) + 1
        for a in range(-n, n + 1):
            for b in range(-n, n + 1):
                uu = u0 + a * VIEWPOINT_SPACING
                vv = v0 + b * VIEWPOINT_SPACING
                du = max(abs(uu - u0) - half_w, 0.0)
                dv = max(abs(vv - v0) - half_h, 0.0)
                d = float(np.hypot(du, dv))
                if not (lo <= d <= hi):
                    continue
                px = center[0] + uu * c - vv * s
                py = center[1] + uu * s + vv * c
                try:
                    ci, cj = self.map.cell_of_map_point(px, py)
                except MapBoundsError:
                    continue
                if traversable[ci, cj]:
                    out.append((px, py))
        out.sort(key=lambda p: (np.hypot(p[0] - x, p[1] - y),
                                round(p[0], 6), round(p[1], 6)))
        return out

    def _begin_approach(self, obs: Observation,
                        decision: NavGoalDecision) -> rb.Action:
        cat = (self.goal_spec["start_receptacle_category"]
               if self.phase.name == PHASE_FIND_OBJECT
               else self.goal_spec["goal_receptacle_category"])
        component = self._receptacle_component(decision, cat)
        if component is None or component.shape[0] == 0:
            return self._scan(obs)
        candidates = self._lattice_candidates(component, obs)
        if not candidates:
            return self._scan(obs)
        pts = np.array([self.map.cell_center_map(int(i), int(j))
                        for i, j in component])
        self._approach_face = tuple(pts.mean(axis=0))
        self._approach_component = component
        self._approach_queue = candidates[1:6]
        self._approach_point = candidates[0]
        self._approach_last = None
        self._verify_tilts = [-0.15, -0.35, -0.55]
        return self._approach_step(obs)

    def _next_candidate(self, obs: Observation) -> rb.Action:
        if self._approach_queue:
            self._approach_point = self._approach_queue.pop(0)
            self._approach_last = None
            self._verify_tilts = [-0.15, -0.35, -0.55]
            return self._approach_step(obs)
        # All candidates tried and the goal never showed: mark the whole
        # receptacle (plus margin for later map growth) as searched.
        if self._approach_component is not None:
            m = self.map.config.cells
            for i, j in self._approach_component:
                i0, j0 = max(int(i) - 7, 0), max(int(j) - 7, 0)
                self._searched[i0:int(i) + 8, j0:int(j) + 8] = True
        self._approach_point = None
        self._approach_component = None
        return self._scan(obs)

    def _approach_step(self, obs: Observation) -> rb.Action:
        x, y, yaw = self._pose(obs)
        px, py = self._approach_point
        d = float(np.hypot(px - x, py - y))
        if d > 0.03:
            if (self._approach_last is not None
                    and np.hypot(x - self._approach_last[0],
                                 y - self._approach_last[1]) < 0.01):
                # Stalled against geometry; try the next lattice point.
                return self._next_candidate(obs)
            self._approach_last = (x, y)
            dxw, dyw = px - x, py - y
            c, s = np.cos(-yaw), np.sin(-yaw)
            step = min(d, 1.5)
            scale = step / d
            return rb.Waypoint(float((c * dxw - s * dyw) * scale),
                               float((s * dxw + c * dyw) * scale),
                               float(wrap_angle(np.arctan2(dyw, dxw) - yaw)))
        # At the lattice point: face the receptacle, then verify visibility.
        fx, fy = self._approach_face
        face_err = wrap_angle(np.arctan2(fy - y, fx - x) - yaw)
        if abs(face_err) > 0.08:
            return rb.Waypoint(0.0, 0.0, float(face_err))
        goal_cat = self._goal_category()
        if self._category_pixels(obs, goal_cat) >= self._pixels_needed(obs):
            return self._arrived(obs)
        if self._verify_tilts:
            return rb.SetHeadTilt(self._verify_tilts.pop(0))
        # Nothing visible from this candidate; try the next one.
        return self._next_candidate(obs)

    def _arrived(self, obs: Observation) -> rb.Action:
        if self.phase.name == PHASE_FIND_OBJECT:
            self._transition(PHASE_GAZE if self.config.use_gaze else PHASE_GRASP,
                             obs.step_count)
        else:
            self._transition(PHASE_PLACE, obs.step_count)
            self._place_stage = "aim"
        return self.act_given_reset(obs)

    def _scan(self, obs: Observation) -> rb.Action:
        """Rotate in place looking for the goal; bounded, then move on."""
        self._scan_steps += 1
        if self._scan_steps > self.config.scan_limit:
            self._scan_steps = 0
            self._decision = None
            self._approach_point = None
        if self.config.action_space == DISCRETE:
            return rb.DiscreteMove("turn_left")
        return rb.Waypoint(0.0, 0.0, rb.TURN_INCREMENT)

    # -- gaze & grasp ----------------------------------------------------------

    def _object_in_base_frame(self, obs: Observation,
                              centroid: tuple[float, float, float]
                              ) -> np.ndarray:
        u, v, rng_est = centroid
        cam = obs.camera
        xr = (u + 0.5 - cam.width / 2.0) / cam.fx
        yr = (v + 0.5 - cam.height / 2.0) / cam.fy
        norm = np.sqrt(1.0 + xr * xr + yr * yr)
        pan, tilt = obs.joints["head_pan"], obs.joints["head_tilt"]
        cp, sp = np.cos(pan), np.sin(pan)
        ct, st = np.cos(tilt), np.sin(tilt)
        fwd = np.array([cp * ct, sp * ct, st])
        right = np.array([sp, -cp, 0.0])
        down = np.cross(fwd, right)
        direction = (fwd + xr * right + yr * down) / norm
        return np.array([0.0, 0.0, cam.mount_height]) + rng_est * direction

    def _ee_in_base_frame(self, obs: Observation) -> np.ndarray:
        reach = rb.ARM_BASE_LENGTH + obs.joints["arm_extension"]
        return np.array([0.0, -reach, obs.joints["lift"] + rb.EE_Z_OFFSET])

    def _gaze_step(self, obs: Observation) -> rb.Action:
        cat = self.goal_spec["object_category"]
        centroid = self._target_centroid(obs, cat)
        if centroid is None:
            self._gaze_lost += 1
            if self._gaze_lost > self.config.gaze_lost_limit:
                self._gaze_lost = 0
                self._transition(PHASE_FIND_OBJECT, obs.step_count)
                return self.act_given_reset(obs)
            return self._scan(obs)
        self._gaze_lost = 0
        u, v, rng_est = centroid
        cam = obs.camera
        obj = self._object_in_base_frame(obs, centroid)
        bearing = float(np.arctan2(obj[1], obj[0]))
        # Keep the target in frame; center it unless the final twist has
        # deliberately offset it to swing the arm closer.
        half_view = cam.hfov / 2.0 - np.deg2rad(4.0)
        if abs(bearing) > half_view:
            return rb.Waypoint(0.0, 0.0, float(bearing))
        row_err = np.arctan2(v - cam.height / 2.0, cam.fy)
        if abs(row_err) > np.deg2rad(8.0):
            return rb.SetHeadTilt(float(obs.joints["head_tilt"] - row_err))

        dist = float(np.linalg.norm(obj - self._ee_in_base_frame(obs)))
        if dist <= self.config.grasp_range - 0.02:
            return self._grasp_step(obs, centroid)
        planar = float(np.hypot(obj[0], obj[1]))
        close_to = max(0.35, self.config.gaze_range
                       - 0.08 * self._grasp_attempts)
        if planar > close_to and not self._stalled:
            if abs(bearing) > np.deg2rad(5.0):
                return rb.Waypoint(0.0, 0.0, float(bearing))
            return rb.Waypoint(float(min(0.25, planar - close_to + 0.05)),
                               0.0, 0.0)
        # Cannot close in any further: rotate so the right-mounted arm
        # swings toward the object, keeping it inside the view cone.
        twist = self._best_twist(obs, obj)
        if twist > 0.02:
            return rb.Waypoint(0.0, 0.0, float(twist))
        if self._grasp_attempts >= 8:
            self.fail("target out of reach", obs.step_count)
            return self._act_failed()
        return self._grasp_step(obs, centroid)

    def _best_twist(self, obs: Observation, obj: np.ndarray) -> float:
        """Base rotation (CCW) minimizing end-effector distance while the
        object stays within the view cone."""
        ee = self._ee_in_base_frame(obs)
        bearing = np.arctan2(obj[1], obj[0])
        max_twist = obs.camera.hfov / 2.0 - np.deg2rad(6.0) + bearing
        best, best_d = 0.0, float(np.linalg.norm(obj - ee))
        for delta in np.arange(0.05, max(max_twist, 0.0) + 1e-9, 0.05):
            c, s = np.cos(-delta), np.sin(-delta)
            rx = c * obj[0] - s * obj[1]
            ry = s * obj[0] + c * obj[1]
            d = float(np.linalg.norm(np.array([rx, ry, obj[2]]) - ee))
            if d < best_d - 1e-6:
                best, best_d = float(delta), d
        return best

    def _grasp_step(self, obs: Observation,
                    centroid: tuple[float, float, float] | None = None) -> rb.Action:
        cat = self.goal_spec["object_category"]
        if centroid is None:
            centroid = self._target_centroid(obs, cat)
        if centroid is None:
            self._transition(PHASE_GAZE if self.config.use_gaze
                             else PHASE_FIND_OBJECT, obs.step_count)
            return self.act_given_reset(obs)
        if self._grasp_attempts >= 8:
            self.fail("grasp attempts exhausted", obs.step_count)
            return self._act_failed()
        ids = self._visible_category_ids(obs, cat)
        cloud = cloud_from_observation(obs, ids)
        if len(cloud):
            candidates = score_grasps(cloud)
            if not candidates:
                self._gaze_backoffs += 1
                if self._gaze_backoffs > self.config.grasp_candidate_retries:
                    self.fail("no graspable candidate", obs.step_count)
                    return self._act_failed()
                return rb.Waypoint(-0.10, 0.0, 0.0)
        self._grasp_attempts += 1
        return rb.Grasp()

    # -- place -------------------------------------------------------------------

    def _reachable_place_point(self, cloud: PointCloud):
        """Surface point the arm can actually reach from a standing spot:
        planar distance within the extended-arm window, preferring depth."""
        pts = cloud.points
        planar = np.hypot(pts[:, 0], pts[:, 1])
        lo = rb.ARM_BASE_LENGTH + 0.02
        hi = rb.ARM_BASE_LENGTH + rb.JOINT_LIMITS["arm_extension"][1] - 0.02
        ok = (planar >= lo) & (planar <= hi)
        if not ok.any():
            return None
        k = int(np.argmax(np.where(ok, planar, -np.inf)))
        return (float(pts[k, 0]), float(pts[k, 1]), float(pts[k, 2]))

    def _goal_cloud(self, obs: Observation) -> PointCloud:
        ids = self._visible_category_ids(
            obs, self.goal_spec["goal_receptacle_category"])
        cloud = cloud_from_observation(obs, ids)
        if len(cloud) == 0:
            return cloud
        # Keep the upper band of the cloud: placement wants the top surface,
        # not points on the receptacle's sides.
        z = cloud.points[:, 2]
        keep = z >= z.max() - 0.12
        labels = cloud.labels[keep] if cloud.labels is not None else None
        return PointCloud(cloud.points[keep], labels)

    def _place_step(self, obs: Observation) -> rb.Action:
        cfg = self.config
        if self._place_stage in ("aim", "drive"):
            cloud = self._goal_cloud(obs)
            if len(cloud) == 0:
                self._scan_steps += 1
                if self._scan_steps > cfg.scan_limit:
                    self.fail("place target lost", obs.step_count)
                    return self._act_failed()
                return rb.Waypoint(0.0, 0.0, rb.TURN_INCREMENT / 2)
            self._scan_steps = 0
            if self._prefer_reachable:
                point = self._reachable_place_point(cloud)
                if point is None:
                    self.fail("out of workspace: no reachable surface point",
                              obs.step_count)
                    return self._act_failed()
                px, py, pz = point
            else:
                px, py, pz = estimate_placement_point(cloud, self.rng)
            self._place_point = (px, py, pz)
            aim = float(np.arctan2(py, px))
            if abs(aim) > 0.05:
                return rb.Waypoint(0.0, 0.0, aim)
            planar = float(np.hypot(px, py))
            if planar > cfg.place_approach and not self._stalled:
                self._place_stage = "drive"
                return rb.Waypoint(float(min(0.25, planar - cfg.place_approach + 0.02)),
                                   0.0, 0.0)
            self._place_stage = "mode"
            return self.act_given_reset(obs)

        if self._place_stage == "mode":
            px, py, pz = self._place_point
            planar = float(np.hypot(px, py))
            try:
                lift, ext = reach_for_point(
                    planar, pz, cfg.release_clearance,
                    rb.JOINT_LIMITS["lift"], rb.JOINT_LIMITS["arm_extension"],
                    rb.ARM_BASE_LENGTH, rb.EE_Z_OFFSET)
            except WorkspaceError:
                if not self._prefer_reachable:
                    # The slab center is out of reach; redo the approach
                    # aiming at a reachable spot on the surface instead.
                    self._prefer_reachable = True
                    self._place_stage = "aim"
                    return self.act_given_reset(obs)
                self.fail(f"out of workspace: placement at {planar:.2f} m",
                          obs.step_count)
                return self._act_failed()
            self._arm_plan = self._arm_motion_plan(obs, lift, ext)
            self._place_stage = "arm"
            return rb.EnterManipulationMode()

        if self._place_stage == "arm":
            if self._arm_plan:
                return self._arm_plan.pop(0)
            self._place_stage = "settle"
            return rb.Release()

        if self._place_stage == "settle":
            if self._settle_left > 0:
                self._settle_left -= 1
                return rb.JointDeltas.of()
            self._transition(PHASE_DONE, obs.step_count)
            return self._act_done()
        raise FetchSimError(f"unknown place stage {self._place_stage}")

    def _arm_motion_plan(self, obs: Observation, lift: float,
                         ext: float) -> list[rb.Action]:
        """Split lift/extension targets into band-legal delta steps."""
        plan: list[rb.Action] = []
        lo, hi = rb.DELTA_BANDS["lift"]
        for name, target in (("lift", lift), ("arm_extension", ext)):
            cur = obs.joints[name]
            remaining = target - cur
            while abs(remaining) >= lo:
                step = float(np.clip(abs(remaining), lo, hi)) * np.sign(remaining)
                plan.append(rb.JointDeltas.of(**{name: step}))
                remaining -= step
        return plan

    # -- top level -----------------------------------------------------------------

    def _act_done(self) -> rb.Action:
        self._stop_sent = True
        return rb.DiscreteMove("stop")

    def _act_failed(self) -> rb.Action:
        self._stop_sent = True
        return rb.DiscreteMove("stop")

    def _note_progress(self, obs: Observation) -> None:
        """Detect blocked motion and mark the blocking cells as obstacles.

        Collisions are not directly observable, but an attempted translation
        that produced no displacement means the way is blocked; stamping a
        small obstacle ahead makes the planner route around it.
        """
        self._stalled = False
        if self._last_pose is None or self._last_motion_dir is None:
            return
        x, y, _ = self._pose(obs)
        lx, ly, _ = self._last_pose
        if np.hypot(x - lx, y - ly) >= 0.01:
            return
        self._stalled = True
        for reach in (0.15, 0.30):
            px = lx + np.cos(self._last_motion_dir) * reach
            py = ly + np.sin(self._last_motion_dir) * reach
            try:
                i, j = self.map.cell_of_map_point(px, py)
            except MapBoundsError:
                continue
            self.map.grid[self.map.OBSTACLES, i, j] = True

    def act(self, obs: Observation) -> rb.Action:
        """One action per observation; exactly one simulator step each."""
        if not self._reset_done:
            raise FetchSimError("agent.reset() must run before act()")
        try:
            update_map(self.map, obs)
        except MapBoundsError:
            self.fail("left the map bounds", obs.step_count)
            return self._act_failed()
        self._note_progress(obs)
        # A navigation phase pinned in place for a long stretch will not
        # recover; fail fast instead of burning the step budget.
        if self.phase.name in (PHASE_FIND_OBJECT, PHASE_FIND_RECEPTACLE):
            x, y, _ = self._pose(obs)
            self._pose_window.append((x, y))
            if len(self._pose_window) > 60:
                self._pose_window.pop(0)
                xs = np.array(self._pose_window)
                span = float(xs.max(axis=0).sum() - xs.min(axis=0).sum())
                if span < 0.05:
                    self.fail("no progress", obs.step_count)
                    return self._act_failed()
        else:
            self._pose_window.clear()
        # Grasp success is observable through the holding flag.
        if self.phase.name in (PHASE_GAZE, PHASE_GRASP) and obs.holding:
            self._grasp_attempts = 0
            self._transition(PHASE_FIND_RECEPTACLE, obs.step_count)
        action = self.act_given_reset(obs)
        x, y, yaw = self._pose(obs)
        self._last_pose = (x, y, yaw)
        self._last_motion_dir = None
        if isinstance(action, rb.Waypoint) and np.hypot(action.dx, action.dy) > 0.02:
            self._last_motion_dir = yaw + float(np.arctan2(action.dy, action.dx))
        elif isinstance(action, rb.DiscreteMove) and action.kind == "forward":
            self._last_motion_dir = yaw
        return action

    def act_given_reset(self, obs: Observation) -> rb.Action:
        name = self.phase.name
        if name in (PHASE_DONE, PHASE_FAILED):
            return self._act_done()
        if name in (PHASE_FIND_OBJECT, PHASE_FIND_RECEPTACLE):
            if self._approach_point is not None:
                return self._approach_step(obs)
            return self._nav_step(obs)
        if name == PHASE_GAZE:
            return self._gaze_step(obs)
        if name == PHASE_GRASP:
            return self._grasp_step(obs)
        if name == PHASE_PLACE:
            return self._place_step(obs)
        raise FetchSimError(f"unknown phase {name}")

    @property
    def failure_reason(self) -> str:
        return self._fail_reason


def run_episode(scene, episode, agent, profile, sim_config=None):
    """Observation/action loop until stop, failure, or the step limit.

    Every ending becomes a scored result; agent exceptions mark the episode
    failed (the trace up to that point still gets evaluated).

    Returns (trace, EpisodeResult).
    """
    from .metrics import evaluate_trace
    from .sim import SimConfig, Simulator

    sim = Simulator(scene, episode, sim_config or SimConfig())
    if hasattr(agent, "reset"):
        agent.reset(episode.goal_spec, scene.catalog.channel_names(),
                    episode.seed)
    obs = sim.last_observation
    failure = ""
    while sim.state.step_count < profile.step_limit:
        try:
            action = agent.act(obs)
        except FetchSimError as e:
            failure = f"agent error: {e}"
            break
        obs = sim.step(action)
        if sim.stopped:
            break
    result = evaluate_trace(sim.trace, episode, scene, profile)
    result.failure_reason = failure or getattr(agent, "failure_reason", "")
    return sim.trace, result
