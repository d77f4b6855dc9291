"""Kinematic robot model: differential-drive base, lift/extension arm,
head and wrist joints, and the two control modes.

The base is a cylinder on the nav grid. In navigation mode the camera faces
forward and the base may translate and rotate; manipulation mode freezes the
base yaw after a 90 degree left turn and leaves base translation along the
(new) heading as a lateral degree of freedom for the arm, which extends to
the robot's right so that it faces the pre-turn target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ActionError
from .geometry import march_segment, wrap_angle

NAVIGATION = "navigation"
MANIPULATION = "manipulation"

ARM_BASE_LENGTH = 0.20  # retracted arm reach from base center, m
EE_Z_OFFSET = 0.05  # end effector sits this far above the lift joint, m

FORWARD_STEP = 0.25  # discrete forward translation, m
TURN_INCREMENT = np.deg2rad(30.0)  # discrete in-place rotation
WAYPOINT_MAX = 2.0  # max planar waypoint displacement per step, m

JOINT_LIMITS: dict[str, tuple[float, float]] = {
    "lift": (0.0, 1.1),
    "arm_extension": (0.0, 0.52),
    "head_pan": (-np.pi, np.pi),
    "head_tilt": (-np.pi / 2, np.pi / 4),
    "wrist_yaw": (-np.pi / 2, np.pi / 2),
    "wrist_pitch": (-np.pi / 2, np.pi / 2),
    "wrist_roll": (-np.pi, np.pi),
    "gripper": (0.0, 1.0),
}

# Allowed per-step magnitude band for nonzero deltas, per joint class.
DELTA_BANDS: dict[str, tuple[float, float]] = {
    "base_forward": (0.10, 0.25),
    "base_turn": (np.deg2rad(5.0), np.deg2rad(30.0)),
    "lift": (0.02, 0.10),
    "arm_extension": (0.02, 0.10),
    "head_pan": (0.02, 0.10),
    "head_tilt": (0.02, 0.10),
    "wrist_yaw": (0.02, 0.10),
    "wrist_pitch": (0.02, 0.10),
    "wrist_roll": (0.02, 0.10),
    "gripper": (0.02, 0.10),
}

ARM_JOINTS = ("lift", "arm_extension", "wrist_yaw", "wrist_pitch",
              "wrist_roll", "gripper")


@dataclass(frozen=True)
class Joints:
    lift: float = 0.60
    arm_extension: float = 0.0
    head_pan: float = 0.0
    head_tilt: float = 0.0
    wrist_yaw: float = 0.0
    wrist_pitch: float = 0.0
    wrist_roll: float = 0.0
    gripper: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in JOINT_LIMITS}


@dataclass(frozen=True)
class RobotState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    joints: Joints = field(default_factory=Joints)
    mode: str = NAVIGATION
    held_object: str | None = None
    step_count: int = 0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


def end_effector(state: RobotState) -> tuple[float, float, float]:
    """End-effector world position; the arm extends to the robot's right."""
    reach = ARM_BASE_LENGTH + state.joints.arm_extension
    ex = state.x + np.sin(state.yaw) * reach
    ey = state.y - np.cos(state.yaw) * reach
    return (float(ex), float(ey), float(state.joints.lift + EE_Z_OFFSET))


# --- Actions ---------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMove:
    kind: str  # forward | turn_left | turn_right | stop

    def __post_init__(self):
        if self.kind not in ("forward", "turn_left", "turn_right", "stop"):
            raise ValueError(f"unknown discrete move {self.kind!r}")


@dataclass(frozen=True)
class Waypoint:
    dx: float  # forward, robot frame
    dy: float  # left, robot frame
    dyaw: float


@dataclass(frozen=True)
class JointDeltas:
    deltas: tuple[tuple[str, float], ...]

    @classmethod
    def of(cls, **kw: float) -> "JointDeltas":
        return cls(tuple(sorted(kw.items())))

    def as_dict(self) -> dict[str, float]:
        return dict(self.deltas)


@dataclass(frozen=True)
class Grasp:
    pass


@dataclass(frozen=True)
class Release:
    pass


@dataclass(frozen=True)
class EnterManipulationMode:
    pass


@dataclass(frozen=True)
class SetHeadTilt:
    tilt: float


Action = (DiscreteMove | Waypoint | JointDeltas | Grasp | Release
          | EnterManipulationMode | SetHeadTilt)


def _clamp_joint(name: str, value: float) -> float:
    lo, hi = JOINT_LIMITS[name]
    return float(min(max(value, lo), hi))


def apply_discrete(state: RobotState, action: DiscreteMove,
                   nav_grid: np.ndarray,
                   cell_size: float) -> tuple[RobotState, bool]:
    """Discrete base motion. Returns (next state, collided).

    Forward moves 0.25 m along the heading, truncated at the last navigable
    point of the swept segment; turns rotate in place; stop is a no-op here
    (episode termination is the harness's business).
    """
    if state.mode != NAVIGATION:
        raise ActionError("discrete base motion requires navigation mode")
    if action.kind == "stop":
        return state, False
    if action.kind == "forward":
        tx = state.x + np.cos(state.yaw) * FORWARD_STEP
        ty = state.y + np.sin(state.yaw) * FORWARD_STEP
        nx_, ny_, blocked = march_segment(nav_grid, state.x, state.y, tx, ty,
                                          cell_size)
        return replace(state, x=nx_, y=ny_), blocked
    sign = 1.0 if action.kind == "turn_left" else -1.0
    return replace(state, yaw=wrap_angle(state.yaw + sign * TURN_INCREMENT)), False


def apply_waypoint(state: RobotState, wp: Waypoint, nav_grid: np.ndarray,
                   cell_size: float) -> tuple[RobotState, bool]:
    """Teleport toward a local waypoint, clamped at the first obstruction.

    The planar displacement is expressed in the robot frame (x forward,
    y left) and its norm is capped at WAYPOINT_MAX; rotation in place always
    succeeds under the cylinder model.
    """
    if state.mode != NAVIGATION:
        raise ActionError("waypoint motion requires navigation mode")
    dx, dy = float(wp.dx), float(wp.dy)
    norm = float(np.hypot(dx, dy))
    if norm > WAYPOINT_MAX:
        dx *= WAYPOINT_MAX / norm
        dy *= WAYPOINT_MAX / norm
    c, s = np.cos(state.yaw), np.sin(state.yaw)
    tx = state.x + c * dx - s * dy
    ty = state.y + s * dx + c * dy
    nx_, ny_, blocked = march_segment(nav_grid, state.x, state.y, tx, ty,
                                      cell_size)
    return replace(state, x=nx_, y=ny_,
                   yaw=wrap_angle(state.yaw + wp.dyaw)), blocked


def _check_band(name: str, value: float) -> None:
    lo, hi = DELTA_BANDS[name]
    mag = abs(value)
    if mag == 0.0:
        return
    if mag < lo - 1e-12 or mag > hi + 1e-12:
        raise ActionError(
            f"delta for {name} ({value:+.4f}) outside per-step band "
            f"[{lo:.3f}, {hi:.3f}]")


def apply_joint_deltas(state: RobotState, action: JointDeltas,
                       nav_grid: np.ndarray,
                       cell_size: float) -> tuple[RobotState, bool]:
    """Apply per-joint deltas, validating per-step magnitude bands.

    Arm joints require manipulation mode. The base may creep forward or
    backward in either mode (in manipulation mode this is the lateral
    manipulation DOF); base turning is forbidden once the yaw is frozen by
    manipulation mode. Joint values clamp at their limits.
    """
    deltas = action.as_dict()
    for name in deltas:
        if name not in DELTA_BANDS:
            raise ActionError(f"unknown joint {name!r}")
        _check_band(name, deltas[name])
    arm_touched = [n for n in deltas if n in ARM_JOINTS and deltas[n] != 0.0]
    if arm_touched and state.mode != MANIPULATION:
        raise ActionError(
            f"arm joints {arm_touched} require manipulation mode")
    if deltas.get("base_turn", 0.0) != 0.0 and state.mode == MANIPULATION:
        raise ActionError("base yaw is frozen in manipulation mode")

    collided = False
    new = state
    fwd = deltas.get("base_forward", 0.0)
    if fwd != 0.0:
        tx = new.x + np.cos(new.yaw) * fwd
        ty = new.y + np.sin(new.yaw) * fwd
        nx_, ny_, collided = march_segment(nav_grid, new.x, new.y, tx, ty,
                                           cell_size)
        new = replace(new, x=nx_, y=ny_)
    turn = deltas.get("base_turn", 0.0)
    if turn != 0.0:
        new = replace(new, yaw=wrap_angle(new.yaw + turn))
    joint_updates = {}
    for name, dv in deltas.items():
        if name in ("base_forward", "base_turn") or dv == 0.0:
            continue
        joint_updates[name] = _clamp_joint(name, getattr(new.joints, name) + dv)
    if joint_updates:
        new = replace(new, joints=replace(new.joints, **joint_updates))
    return new, collided


def set_head_tilt(state: RobotState, action: SetHeadTilt) -> RobotState:
    return replace(state, joints=replace(
        state.joints, head_tilt=_clamp_joint("head_tilt", action.tilt)))


def enter_manipulation_mode(state: RobotState) -> RobotState:
    """Rotate the base 90 degrees left, turn the head toward the arm, and
    freeze the base yaw. The simulator enforces the once-per-episode rule."""
    if state.mode != NAVIGATION:
        raise ActionError("already in manipulation mode")
    return replace(
        state,
        yaw=wrap_angle(state.yaw + np.pi / 2),
        mode=MANIPULATION,
        joints=replace(state.joints, head_pan=-np.pi / 2),
    )
