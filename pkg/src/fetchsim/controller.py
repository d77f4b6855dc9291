"""Goal-pose velocity controller with a trapezoidal speed envelope.

Heuristic from the hardware stack: rotate until the robot faces the goal
position, drive forward under a speed envelope that can always stop at the
goal, then rotate in place to the goal orientation. Stateless per call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle


@dataclass(frozen=True)
class ControllerLimits:
    v_max: float = 0.3  # m/s
    w_max: float = 0.6  # rad/s
    lin_accel: float = 0.3  # m/s^2
    ang_accel: float = 0.8  # rad/s^2
    pos_tol: float = 0.05  # m
    yaw_tol: float = 0.05  # rad
    heading_threshold: float = 0.2  # rad; rotate in place above this


def _trapezoid(err: float, vmax: float, accel: float, dt: float) -> float:
    """Speed that can still decelerate to zero over |err| and cannot
    overshoot within one control period."""
    mag = min(vmax, np.sqrt(2.0 * accel * abs(err)), abs(err) / dt)
    return float(np.sign(err) * mag)


def velocity_controller_step(pose: tuple[float, float, float],
                             goal_pose: tuple[float, float, float],
                             limits: ControllerLimits,
                             dt: float) -> tuple[float, float]:
    """One control step toward a goal pose; returns (v, w).

    (0, 0) once within both position and yaw tolerance.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, yaw = pose
    gx, gy, gyaw = goal_pose
    dx, dy = gx - x, gy - y
    dist = float(np.hypot(dx, dy))

    if dist <= limits.pos_tol:
        yaw_err = wrap_angle(gyaw - yaw)
        if abs(yaw_err) <= limits.yaw_tol:
            return (0.0, 0.0)
        return (0.0, _trapezoid(yaw_err, limits.w_max, limits.ang_accel, dt))

    heading_err = wrap_angle(np.arctan2(dy, dx) - yaw)
    w = _trapezoid(heading_err, limits.w_max, limits.ang_accel, dt)
    if abs(heading_err) > limits.heading_threshold:
        return (0.0, w)
    v = _trapezoid(dist, limits.v_max, limits.lin_accel, dt)
    return (v, w)


def rollout(pose: tuple[float, float, float],
            goal_pose: tuple[float, float, float],
            limits: ControllerLimits, dt: float = 0.05,
            max_steps: int = 5000) -> list[tuple[float, float, float]]:
    """Integrate the controller to the goal; used by tests and demos."""
    traj = [pose]
    x, y, yaw = pose
    for _ in range(max_steps):
        v, w = velocity_controller_step((x, y, yaw), goal_pose, limits, dt)
        if v == 0.0 and w == 0.0:
            break
        x += v * np.cos(yaw) * dt
        y += v * np.sin(yaw) * dt
        yaw = wrap_angle(yaw + w * dt)
        traj.append((x, y, yaw))
    return traj
