"""Staged success metrics, partial-success scoring, and batch aggregation.

The four stages form a chain: find the object, pick it, find the goal
receptacle, place the object. Each stage can only succeed after the
previous one, and the stage steps are measured between the first instants
the successive conditions hold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .episodes import Episode
from .scene import Scene
from .sim import TraceStep


@dataclass(frozen=True)
class MetricProfile:
    """Threshold set for stage checks.

    The simulation profile uses precomputed viewpoints and pixel fractions;
    the real-world profile widens the radii, accepts any visibility, and
    drops the pick-radius / settle-window machinery (None disables a check).
    """

    name: str
    viewpoint_radius: float
    pixel_fraction: float | None  # None: any nonzero pixel count passes
    pick_radius: float | None  # None: success = object became held
    settle_steps: int | None  # None: landing on the goal is enough
    lin_vel_thresh: float | None  # modeled by the settle window
    ang_vel_thresh: float | None
    step_limit: int
    anchor: str = "viewpoint"  # real profile measures straight to geometry


SIM_PROFILE = MetricProfile(
    name="sim", viewpoint_radius=0.1, pixel_fraction=0.001, pick_radius=0.8,
    settle_steps=50, lin_vel_thresh=5e-3, ang_vel_thresh=5e-2,
    step_limit=1250, anchor="viewpoint")

REAL_PROFILE = MetricProfile(
    name="real", viewpoint_radius=1.0, pixel_fraction=None, pick_radius=None,
    settle_steps=None, lin_vel_thresh=None, ang_vel_thresh=None,
    step_limit=300, anchor="geometry")

PROFILES = {"sim": SIM_PROFILE, "real": REAL_PROFILE}


@dataclass
class StageOutcome:
    find_obj: bool = False
    pick: bool = False
    find_rec: bool = False
    place: bool = False
    steps_per_stage: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self):
        chain = (self.find_obj, self.pick, self.find_rec, self.place)
        for earlier, later in zip(chain, chain[1:]):
            if later and not earlier:
                raise ValueError(f"stage chain violated: {chain}")

    @property
    def stages(self) -> tuple[bool, bool, bool, bool]:
        return (self.find_obj, self.pick, self.find_rec, self.place)


@dataclass
class EpisodeResult:
    episode_id: str
    outcome: StageOutcome
    overall: bool
    partial: float
    total_steps: int
    seed: int = 0
    config_hash: str = ""
    failure_reason: str = ""

    def to_json_line(self) -> str:
        doc = {
            "episode_id": self.episode_id,
            "find_obj": self.outcome.find_obj,
            "pick": self.outcome.pick,
            "find_rec": self.outcome.find_rec,
            "place": self.outcome.place,
            "overall": self.overall,
            "partial": self.partial,
            "steps_per_stage": list(self.outcome.steps_per_stage),
            "total_steps": self.total_steps,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "failure_reason": self.failure_reason,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "EpisodeResult":
        d = json.loads(line)
        outcome = StageOutcome(d["find_obj"], d["pick"], d["find_rec"],
                               d["place"], tuple(d["steps_per_stage"]))
        return cls(d["episode_id"], outcome, d["overall"], d["partial"],
                   d["total_steps"], d.get("seed", 0),
                   d.get("config_hash", ""), d.get("failure_reason", ""))


def _viewpoint_positions(episode: Episode, scene: Scene,
                         which: str) -> np.ndarray:
    vps = (episode.target_viewpoints() if which == "target"
           else episode.goal_viewpoints(scene))
    if not vps:
        return np.empty((0, 2))
    return np.array([[v.x, v.y] for v in vps])


def _geometry_anchors(episode: Episode, scene: Scene, which: str):
    """Real-profile anchors: target objects / goal receptacle footprints."""
    if which == "target":
        objs = [episode.object_by_id(t) for t in episode.target_object_ids]
        return [("point", (o.x, o.y)) for o in objs]
    recs = scene.receptacles_of(episode.goal_receptacle_category)
    return [("rect", r.footprint) for r in recs]


def _within_anchor(profile: MetricProfile, episode: Episode, scene: Scene,
                   which: str, x: float, y: float) -> bool:
    if profile.anchor == "viewpoint":
        pts = _viewpoint_positions(episode, scene, which)
        if pts.shape[0] == 0:
            return False
        d = np.hypot(pts[:, 0] - x, pts[:, 1] - y)
        return bool(d.min() <= profile.viewpoint_radius)
    for kind, anchor in _geometry_anchors(episode, scene, which):
        if kind == "point":
            ax, ay = anchor
            if np.hypot(ax - x, ay - y) <= profile.viewpoint_radius:
                return True
        else:
            if anchor.distance_to_point(x, y) <= profile.viewpoint_radius:
                return True
    return False


def _pixels_ok(profile: MetricProfile, pixels: int, total: int) -> bool:
    if profile.pixel_fraction is None:
        return pixels > 0
    return pixels / total >= profile.pixel_fraction


def _bounded(trace: list[TraceStep], profile: MetricProfile) -> list[TraceStep]:
    return [t for t in trace if t.step <= profile.step_limit]


def first_find_obj_step(trace: list[TraceStep], episode: Episode,
                        scene: Scene, profile: MetricProfile) -> int | None:
    for t in _bounded(trace, profile):
        if (_within_anchor(profile, episode, scene, "target", t.x, t.y)
                and _pixels_ok(profile, t.target_pixels, t.total_pixels)):
            return t.step
    return None


def check_find_obj(trace: list[TraceStep], episode: Episode, scene: Scene,
                   profile: MetricProfile) -> bool:
    return first_find_obj_step(trace, episode, scene, profile) is not None


def first_pick_step(trace: list[TraceStep], episode: Episode, scene: Scene,
                    profile: MetricProfile) -> int | None:
    t_find = first_find_obj_step(trace, episode, scene, profile)
    if t_find is None:
        return None
    for t in _bounded(trace, profile):
        if t.step < t_find or t.grasp is None:
            continue
        if profile.pick_radius is None:
            if t.grasp.success:
                return t.step
            continue
        if (t.grasp.target_visible
                and t.grasp.distance <= profile.pick_radius):
            return t.step
    return None


def check_pick(trace: list[TraceStep], episode: Episode, scene: Scene,
               profile: MetricProfile) -> bool:
    return first_pick_step(trace, episode, scene, profile) is not None


def first_find_rec_step(trace: list[TraceStep], episode: Episode,
                        scene: Scene, profile: MetricProfile) -> int | None:
    t_pick = first_pick_step(trace, episode, scene, profile)
    if t_pick is None:
        return None
    for t in _bounded(trace, profile):
        if t.step < t_pick:
            continue
        if (_within_anchor(profile, episode, scene, "goal", t.x, t.y)
                and _pixels_ok(profile, t.goal_receptacle_pixels,
                               t.total_pixels)):
            return t.step
    return None


def check_find_rec(trace: list[TraceStep], episode: Episode, scene: Scene,
                   profile: MetricProfile) -> bool:
    return first_find_rec_step(trace, episode, scene, profile) is not None


def _goal_receptacle_ids(episode: Episode, scene: Scene) -> set[str]:
    return {r.id for r in scene.receptacles_of(episode.goal_receptacle_category)}


def first_place_step(trace: list[TraceStep], episode: Episode, scene: Scene,
                     profile: MetricProfile) -> int | None:
    """Step at which a successful placement's release happened."""
    t_rec = first_find_rec_step(trace, episode, scene, profile)
    if t_rec is None:
        return None
    goal_ids = _goal_receptacle_ids(episode, scene)
    bounded = _bounded(trace, profile)
    for t in bounded:
        if t.step < t_rec or t.release is None:
            continue
        if t.release.receptacle_id not in goal_ids:
            continue
        # No arm-scene collision while maneuvering the held object.
        held_steps = [u for u in bounded
                      if u.holding == t.release.object_id or u.step == t.step]
        if any(u.arm_collision for u in held_steps):
            continue
        if profile.settle_steps is None:
            return t.step
        # The object must stay supported (not re-grasped, not displaced) for
        # the settle window; quasi-statics stand in for velocity thresholds.
        window = [u for u in bounded
                  if t.step < u.step <= t.step + profile.settle_steps]
        if len(window) < profile.settle_steps:
            continue
        disturbed = any(
            (u.grasp is not None and u.grasp.object_id == t.release.object_id)
            for u in window)
        if not disturbed:
            return t.step
    return None


def check_place(trace: list[TraceStep], episode: Episode, scene: Scene,
                profile: MetricProfile) -> bool:
    return first_place_step(trace, episode, scene, profile) is not None


def partial_success(outcome: StageOutcome) -> float:
    """Fraction of chained stages completed, in {0, .25, .5, .75, 1}."""
    return sum(outcome.stages) / 4.0


def evaluate_trace(trace: list[TraceStep], episode: Episode, scene: Scene,
                   profile: MetricProfile) -> EpisodeResult:
    t1 = first_find_obj_step(trace, episode, scene, profile)
    t2 = first_pick_step(trace, episode, scene, profile)
    t3 = first_find_rec_step(trace, episode, scene, profile)
    t4 = first_place_step(trace, episode, scene, profile)
    if t4 is not None and profile.settle_steps:
        t4 += profile.settle_steps
    steps = (
        t1 if t1 is not None else 0,
        t2 - t1 if t2 is not None else 0,
        t3 - t2 if t3 is not None else 0,
        t4 - t3 if t4 is not None else 0,
    )
    outcome = StageOutcome(t1 is not None, t2 is not None, t3 is not None,
                           t4 is not None, steps)
    total = max((t.step for t in trace), default=0)
    return EpisodeResult(
        episode_id=episode.id, outcome=outcome,
        overall=all(outcome.stages), partial=partial_success(outcome),
        total_steps=min(total, profile.step_limit), seed=episode.seed)


@dataclass
class SummaryTable:
    n_episodes: int
    stage_rates: tuple[float, float, float, float]  # percent
    overall_rate: float  # percent
    mean_partial: float  # percent
    mean_steps: tuple[float, float, float, float]  # conditioned on stage success
    attempt_rates: tuple[float, float, float, float]  # percent entered

    STAGES = ("FindObj", "Pick", "FindRec", "Place")

    def to_text(self, label: str = "") -> str:
        head = (f"{'config':<24} {'N':>5} "
                + "".join(f"{s:>9}" for s in self.STAGES)
                + f" {'Overall':>9} {'Partial':>9}")
        row = (f"{label or '-':<24} {self.n_episodes:>5} "
               + "".join(f"{r:>9.1f}" for r in self.stage_rates)
               + f" {self.overall_rate:>9.1f} {self.mean_partial:>9.1f}")
        steps = ("  mean steps | " + " ".join(
            f"{s}: {v:.1f}" for s, v in zip(self.STAGES, self.mean_steps)))
        attempts = ("  attempted% | " + " ".join(
            f"{s}: {v:.1f}" for s, v in zip(self.STAGES, self.attempt_rates)))
        return "\n".join([head, row, steps, attempts])

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "stage_rates": list(self.stage_rates),
            "overall_rate": self.overall_rate,
            "mean_partial": self.mean_partial,
            "mean_steps": list(self.mean_steps),
            "attempt_rates": list(self.attempt_rates),
        }


def aggregate(results: list[EpisodeResult]) -> SummaryTable:
    """Batch summary: per-stage rates, overall, partial metric, mean steps
    per stage over episodes where the stage completed, and attempt rates
    (a stage is attempted when every earlier stage succeeded)."""
    if not results:
        raise ValueError("cannot aggregate an empty result list")
    n = len(results)
    stages = np.array([r.outcome.stages for r in results], dtype=bool)
    steps = np.array([r.outcome.steps_per_stage for r in results], dtype=float)
    rates = tuple(100.0 * stages[:, k].mean() for k in range(4))
    mean_steps = []
    for k in range(4):
        done = stages[:, k]
        mean_steps.append(float(steps[done, k].mean()) if done.any() else 0.0)
    attempted = np.ones((n, 4), dtype=bool)
    for k in range(1, 4):
        attempted[:, k] = stages[:, k - 1]
    return SummaryTable(
        n_episodes=n,
        stage_rates=tuple(float(r) for r in rates),
        overall_rate=float(100.0 * np.mean([r.overall for r in results])),
        mean_partial=float(100.0 * np.mean([r.partial for r in results])),
        mean_steps=tuple(mean_steps),
        attempt_rates=tuple(100.0 * attempted[:, k].mean() for k in range(4)),
    )
