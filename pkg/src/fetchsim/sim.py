"""Single-episode world simulator.

Owns the mutable world (robot state, object supports), applies one action
per step, renders observations, and logs the per-step trace that the metric
checkers consume. One instance is single-threaded; independent instances may
run in parallel.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import robot as rb
from .camera import (
    GROUND_TRUTH,
    CameraModel,
    HeightField,
    Observation,
    PerceptionNoiseProfile,
    render_observation,
)
from .episodes import HELD, ON_FLOOR, ON_RECEPTACLE, Episode, ObjectInstance
from .errors import ActionError
from .geometry import cell_of, wrap_angle
from .scene import Scene
from .seeding import rng_from

GRASP_RADIUS = 0.8  # magic-snap reach, m
DROP_TOLERANCE = 0.15  # max fall height for a successful placement, m


@dataclass
class GraspAttempt:
    success: bool
    object_id: str | None
    distance: float  # end effector to the grasped/nearest candidate, m
    target_visible: bool


@dataclass
class ReleaseEvent:
    object_id: str
    receptacle_id: str | None  # None means the object fell to the floor
    drop_height: float


@dataclass
class TraceStep:
    step: int
    x: float
    y: float
    yaw: float
    ee: tuple[float, float, float]
    mode: str
    holding: str | None
    action: str
    stop: bool
    base_collision: bool
    arm_collision: bool
    grasp: GraspAttempt | None
    release: ReleaseEvent | None
    target_pixels: int
    goal_receptacle_pixels: int
    total_pixels: int


@dataclass
class SimConfig:
    camera: CameraModel = field(default_factory=CameraModel)
    noise: PerceptionNoiseProfile = GROUND_TRUTH
    grasp_radius: float = GRASP_RADIUS
    drop_tolerance: float = DROP_TOLERANCE


def _action_name(action: rb.Action) -> str:
    if isinstance(action, rb.DiscreteMove):
        return action.kind
    return type(action).__name__.lower()


class Simulator:
    """Deterministic kinematic simulator for one episode."""

    def __init__(self, scene: Scene, episode: Episode,
                 config: SimConfig | None = None):
        self.scene = scene
        self.episode = episode
        self.config = config or SimConfig()
        self.objects: list[ObjectInstance] = copy.deepcopy(episode.objects)
        self._by_id = {o.id: o for o in self.objects}

        # Stable instance ids: receptacles first, then objects.
        self.receptacle_ids = {r.id: k + 1
                               for k, r in enumerate(scene.receptacles)}
        base = len(scene.receptacles)
        self.object_ids = {o.id: base + k + 1
                           for k, o in enumerate(self.objects)}
        self.categories_of = {v: scene.receptacle_by_id(k).category
                              for k, v in self.receptacle_ids.items()}
        self.categories_of.update(
            {v: self._by_id[k].category for k, v in self.object_ids.items()})

        self.heightfield = HeightField.from_scene(scene, self.receptacle_ids)
        x0, y0, yaw0 = episode.robot_start
        self.start_pose = (x0, y0, yaw0)
        self.state = rb.RobotState(x=x0, y=y0, yaw=yaw0)
        self._noise_rng = rng_from("noise", self.config.noise.seed, episode.seed)
        self._manip_mode_used = False
        self.stopped = False
        self.trace: list[TraceStep] = []
        self._goal_rec_instance_ids = {
            self.receptacle_ids[r.id]
            for r in scene.receptacles_of(episode.goal_receptacle_category)}
        self._target_instance_ids = {
            self.object_ids[t] for t in episode.target_object_ids}
        self._last_gt_semantic: np.ndarray | None = None
        self.last_observation = self._observe()
        self.trace.append(self._trace_step("reset", False, False, None, None,
                                           stop=False))

    # -- sensing ------------------------------------------------------------

    def _render_gt(self) -> tuple[np.ndarray, np.ndarray]:
        cam = self.config.camera
        j = self.state.joints
        depth, semantic, _ = render_observation(
            self.heightfield, self.objects, self.object_ids,
            self.categories_of, cam, self.state.x, self.state.y,
            self.state.yaw, j.head_pan, j.head_tilt,
            GROUND_TRUTH, None, self.scene.catalog.channel_names())
        return depth, semantic

    def _observe(self) -> Observation:
        cam = self.config.camera
        j = self.state.joints
        depth, semantic = self._render_gt()
        self._last_gt_semantic = semantic.copy()
        ids, counts = np.unique(semantic, return_counts=True)
        self._last_pixel_counts = {int(i): int(c)
                                   for i, c in zip(ids, counts) if i != 0}
        noise = self.config.noise
        if noise.is_ground_truth:
            agent_sem = semantic
            detections = {i: self.categories_of[i]
                          for i in self._last_pixel_counts}
        else:
            agent_sem = semantic.copy()
            detections = {}
            for i in sorted(self._last_pixel_counts):
                if self._noise_rng.random() < noise.dropout_prob:
                    agent_sem[agent_sem == i] = 0
                    continue
                cat = self.categories_of[i]
                if self._noise_rng.random() < noise.misclassify_prob:
                    cats = [c for c in self.scene.catalog.channel_names()
                            if c != cat]
                    cat = str(cats[int(self._noise_rng.integers(len(cats)))])
                detections[i] = cat
        x0, y0, yaw0 = self.start_pose
        dx, dy = self.state.x - x0, self.state.y - y0
        c, s = np.cos(-yaw0), np.sin(-yaw0)
        rel = (c * dx - s * dy, s * dx + c * dy,
               wrap_angle(self.state.yaw - yaw0))
        return Observation(
            depth=depth, semantic=agent_sem, detections=detections,
            base_pose_rel_start=rel, joints=self.state.joints.as_dict(),
            holding=self.state.held_object is not None,
            goal_spec=self.episode.goal_spec,
            step_count=self.state.step_count, camera=cam)

    # -- world mutation -----------------------------------------------------

    def _visible_target_ids(self) -> set[int]:
        return set(self._last_pixel_counts) & self._target_instance_ids

    def _snap_grasp(self) -> GraspAttempt:
        if self.state.held_object is not None:
            raise ActionError("grasp while already holding an object")
        ee = np.array(rb.end_effector(self.state))
        best = None
        best_d = np.inf
        visible = self._visible_target_ids()
        for oid in self.episode.target_object_ids:
            if self.object_ids[oid] not in visible:
                continue
            o = self._by_id[oid]
            center = np.array([o.x, o.y, o.z + o.height / 2.0])
            d = float(np.linalg.norm(ee - center))
            if d < best_d:
                best, best_d = o, d
        if best is None:
            return GraspAttempt(False, None, np.inf, False)
        if best_d > self.config.grasp_radius:
            return GraspAttempt(False, None, best_d, True)
        best.support = HELD
        best.support_id = None
        self.state = replace(self.state, held_object=best.id)
        return GraspAttempt(True, best.id, best_d, True)

    def _release(self) -> ReleaseEvent:
        oid = self.state.held_object
        if oid is None:
            raise ActionError("release with an empty gripper")
        obj = self._by_id[oid]
        ex, ey, ez = rb.end_effector(self.state)
        landed: str | None = None
        for rec in self.scene.receptacles:
            if rec.surface_polygon.contains(ex, ey):
                drop = ez - rec.surface_height
                if 0.0 < drop <= self.config.drop_tolerance:
                    landed = rec.id
                    obj.x, obj.y, obj.z = ex, ey, rec.surface_height
                    obj.support = ON_RECEPTACLE
                    obj.support_id = rec.id
                    drop_height = drop
                break
        if landed is None:
            obj.x, obj.y, obj.z = ex, ey, 0.0
            obj.support = ON_FLOOR
            obj.support_id = None
            drop_height = ez
        self.state = replace(self.state, held_object=None)
        return ReleaseEvent(oid, landed, float(drop_height))

    def _arm_collides(self) -> bool:
        """True when the arm segment passes through walls or receptacles."""
        x0, y0 = self.state.x, self.state.y
        ex, ey, ez = rb.end_effector(self.state)
        h = self.scene.cell_size
        tops = self.heightfield.tops
        n = max(int(np.ceil(np.hypot(ex - x0, ey - y0) / (h / 2))), 1)
        for k in range(n + 1):
            t = k / n
            x = x0 + t * (ex - x0)
            y = y0 + t * (ey - y0)
            i, j = cell_of(x, y, h)
            if i < 0 or j < 0 or i >= tops.shape[0] or j >= tops.shape[1]:
                return True
            if tops[i, j] > ez:
                return True
        return False

    # -- stepping -----------------------------------------------------------

    def step(self, action: rb.Action) -> Observation:
        """Apply one action, advance one step, return the new observation."""
        if self.stopped:
            raise ActionError("episode already stopped")
        collided = False
        grasp: GraspAttempt | None = None
        release: ReleaseEvent | None = None
        stop = False
        arm_moved = False

        if isinstance(action, rb.DiscreteMove):
            if action.kind == "stop":
                stop = True
            else:
                self.state, collided = rb.apply_discrete(
                    self.state, action, self.scene.nav_grid,
                    self.scene.cell_size)
        elif isinstance(action, rb.Waypoint):
            self.state, collided = rb.apply_waypoint(
                self.state, action, self.scene.nav_grid, self.scene.cell_size)
        elif isinstance(action, rb.JointDeltas):
            self.state, collided = rb.apply_joint_deltas(
                self.state, action, self.scene.nav_grid, self.scene.cell_size)
            arm_moved = any(v != 0.0 for k, v in action.deltas
                            if k not in ("base_turn",))
        elif isinstance(action, rb.SetHeadTilt):
            self.state = rb.set_head_tilt(self.state, action)
        elif isinstance(action, rb.EnterManipulationMode):
            if self._manip_mode_used:
                raise ActionError(
                    "manipulation mode may be entered only once per episode")
            self.state = rb.enter_manipulation_mode(self.state)
            self._manip_mode_used = True
            arm_moved = True
        elif isinstance(action, rb.Grasp):
            grasp = self._snap_grasp()
        elif isinstance(action, rb.Release):
            release = self._release()
            arm_moved = True
        else:
            raise ActionError(f"unknown action {action!r}")

        arm_collision = arm_moved and self._arm_collides()
        self.state = replace(self.state, step_count=self.state.step_count + 1)
        if stop:
            self.stopped = True
        self.last_observation = self._observe()
        self.trace.append(self._trace_step(
            _action_name(action), collided, arm_collision, grasp, release,
            stop))
        return self.last_observation

    def _trace_step(self, action_name: str, collided: bool,
                    arm_collision: bool, grasp: GraspAttempt | None,
                    release: ReleaseEvent | None, stop: bool) -> TraceStep:
        per = self._last_pixel_counts
        tgt = sum(per.get(i, 0) for i in self._target_instance_ids)
        goal = sum(per.get(i, 0) for i in self._goal_rec_instance_ids)
        return TraceStep(
            step=self.state.step_count, x=self.state.x, y=self.state.y,
            yaw=self.state.yaw, ee=rb.end_effector(self.state),
            mode=self.state.mode, holding=self.state.held_object,
            action=action_name, stop=stop, base_collision=collided,
            arm_collision=arm_collision, grasp=grasp, release=release,
            target_pixels=tgt, goal_receptacle_pixels=goal,
            total_pixels=int(self.config.camera.pixels))
