"""Dense reward signals for skill training, as pure functions of step state.

Three rewards: navigation (geodesic progress plus heading shaping near the
goal and a collision term), gaze (end-effector progress plus an alignment
term within reach, with success/wrong-object events), and placement (sparse
release and per-step contact terms). All include the constant slack reward.

The navigation collision term is applied as a penalty: a positive bonus for
colliding would reward crashing, so the penalty sign is the default and the
published sign is available behind ``literal_collision_sign`` for fidelity
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SLACK_REWARD = -0.005


@dataclass(frozen=True)
class FindRewardParams:
    alpha: float = 1.0  # geodesic progress gain
    beta: float = 1.0  # heading progress gain near the goal
    gamma: float = 0.3  # collision magnitude
    d_close: float = 3.0  # m; heading term active within this distance
    literal_collision_sign: bool = False  # +gamma on collision when True


@dataclass(frozen=True)
class GazeRewardParams:
    alpha: float = 2.0  # end-effector progress gain
    beta: float = 1.0  # alignment gain within reach
    gamma: float = 0.8  # m; alignment active within this distance
    success_bonus: float = 2.0
    wrong_object_penalty: float = -0.5


@dataclass(frozen=True)
class PlaceRewardParams:
    release_contact: float = 5.0
    contact_per_step: float = 1.0
    failed_release: float = -1.0


@dataclass(frozen=True)
class RewardParams:
    find: FindRewardParams = field(default_factory=FindRewardParams)
    gaze: GazeRewardParams = field(default_factory=GazeRewardParams)
    place: PlaceRewardParams = field(default_factory=PlaceRewardParams)
    slack: float = SLACK_REWARD


@dataclass(frozen=True)
class RewardState:
    """Per-step quantities the navigation/gaze rewards are built from."""

    d: float  # geodesic (nav) or end-effector (gaze) distance to goal, m
    theta: float  # heading / camera-ray error angle, rad
    did_collide: bool = False

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"distance must be nonnegative, got {self.d}")


def reward_find_x(prev: RewardState, cur: RewardState,
                  p: RewardParams | None = None) -> float:
    """Navigation reward for the object/receptacle finding skills."""
    p = p or RewardParams()
    f = p.find
    r = f.alpha * (prev.d - cur.d)
    if cur.d <= f.d_close:
        r += f.beta * (prev.theta - cur.theta)
    if cur.did_collide:
        r += f.gamma if f.literal_collision_sign else -f.gamma
    return r + p.slack


@dataclass(frozen=True)
class GazeEvents:
    success: bool = False
    wrong_object_centered: bool = False  # fire once per distinct object


def reward_gaze(prev: RewardState, cur: RewardState,
                p: RewardParams | None = None,
                events: GazeEvents = GazeEvents()) -> float:
    """Gaze reward: approach the target, then look straight at it."""
    p = p or RewardParams()
    g = p.gaze
    r = g.alpha * (prev.d - cur.d)
    if cur.d <= g.gamma:
        r += g.beta * float(np.cos(cur.theta))
    if events.success:
        r += g.success_bonus
    if events.wrong_object_centered:
        r += g.wrong_object_penalty
    return r + p.slack


@dataclass(frozen=True)
class PlaceStepEvents:
    released: bool = False
    release_contact: bool = False  # object landed on the goal receptacle
    in_contact: bool = False  # object resting on the goal receptacle this step


def reward_place(events: PlaceStepEvents,
                 p: RewardParams | None = None) -> float:
    """Placement reward for one step's events."""
    p = p or RewardParams()
    r = 0.0
    if events.released:
        r += (p.place.release_contact if events.release_contact
              else p.place.failed_release)
    if events.in_contact:
        r += p.place.contact_per_step
    return r + p.slack
