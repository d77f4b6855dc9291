"""Episode generation: object placements, task assignment, robot spawn.

An episode instantiates objects from a split pool onto receptacle surfaces,
names a target object category on a start receptacle category, names a goal
receptacle category, and spawns the robot at least 3 m (geodesic) from every
viewpoint of the receptacles holding target objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .catalog import PHASES, Catalog, ObjectTemplate, SplitAssignment
from .errors import EpisodeGenerationError
from .geometry import bfs_meters, cell_of
from .scene import Receptacle, Scene, Viewpoint, all_viewpoints
from .seeding import rng_from

MIN_SPAWN_GEODESIC = 3.0

ON_RECEPTACLE = "on_receptacle"
ON_FLOOR = "on_floor"
HELD = "held"


@dataclass
class ObjectInstance:
    """A concrete placed object."""

    id: str
    template_id: str
    category: str
    footprint_radius: float
    height: float
    x: float
    y: float
    z: float  # height of the object's base
    yaw: float
    support: str  # ON_RECEPTACLE / ON_FLOOR / HELD
    support_id: str | None  # receptacle id when ON_RECEPTACLE

    def to_dict(self) -> dict:
        return {
            "id": self.id, "template_id": self.template_id,
            "category": self.category,
            "footprint_radius": self.footprint_radius, "height": self.height,
            "pose": [self.x, self.y, self.z, self.yaw],
            "support": self.support, "support_id": self.support_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectInstance":
        x, y, z, yaw = (float(v) for v in d["pose"])
        return cls(d["id"], d["template_id"], d["category"],
                   float(d["footprint_radius"]), float(d["height"]),
                   x, y, z, yaw, d["support"], d["support_id"])


@dataclass
class Episode:
    id: str
    scene_id: str
    seed: int
    split: str
    objects: list[ObjectInstance]
    target_object_ids: list[str]
    target_category: str
    start_receptacle_category: str
    goal_receptacle_category: str
    robot_start: tuple[float, float, float]  # x, y, yaw
    viewpoints: dict[str, list[Viewpoint]]  # receptacle id -> viewpoints
    warnings: list[str] = field(default_factory=list)

    @property
    def goal_spec(self) -> dict:
        return {
            "object_category": self.target_category,
            "start_receptacle_category": self.start_receptacle_category,
            "goal_receptacle_category": self.goal_receptacle_category,
        }

    def object_by_id(self, oid: str) -> ObjectInstance:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def target_viewpoints(self) -> list[Viewpoint]:
        """Viewpoints of the receptacles currently hosting target objects."""
        recs = {self.object_by_id(t).support_id for t in self.target_object_ids}
        out: list[Viewpoint] = []
        for rid in sorted(r for r in recs if r):
            out.extend(self.viewpoints.get(rid, []))
        return out

    def goal_viewpoints(self, scene: Scene) -> list[Viewpoint]:
        out: list[Viewpoint] = []
        for rec in scene.receptacles_of(self.goal_receptacle_category):
            out.extend(self.viewpoints.get(rec.id, []))
        return out

    def to_json(self) -> str:
        doc = {
            "id": self.id, "scene_id": self.scene_id, "seed": self.seed,
            "split": self.split,
            "objects": [o.to_dict() for o in self.objects],
            "target_object_ids": self.target_object_ids,
            "target_category": self.target_category,
            "start_receptacle_category": self.start_receptacle_category,
            "goal_receptacle_category": self.goal_receptacle_category,
            "robot_start": list(self.robot_start),
            "viewpoints": {k: [v.to_list() for v in vs]
                           for k, vs in sorted(self.viewpoints.items())},
            "warnings": self.warnings,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Episode":
        d = json.loads(text)
        x, y, yaw = (float(v) for v in d["robot_start"])
        return cls(
            id=d["id"], scene_id=d["scene_id"], seed=int(d["seed"]),
            split=d["split"],
            objects=[ObjectInstance.from_dict(o) for o in d["objects"]],
            target_object_ids=list(d["target_object_ids"]),
            target_category=d["target_category"],
            start_receptacle_category=d["start_receptacle_category"],
            goal_receptacle_category=d["goal_receptacle_category"],
            robot_start=(x, y, yaw),
            viewpoints={k: [Viewpoint(float(a), float(b), c) for a, b, c in vs]
                        for k, vs in d["viewpoints"].items()},
            warnings=list(d.get("warnings", [])),
        )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def object_count_range(total_surface_area: float) -> tuple[int, int]:
    """Object count band: 1.5x to 2x the surface area in square meters.

    Bounds round half-up with a floor of one object per scene.
    """
    lo = max(_round_half_up(1.5 * total_surface_area), 1)
    hi = max(_round_half_up(2.0 * total_surface_area), lo)
    return lo, hi


def _try_place_on(rec: Receptacle, tpl: ObjectTemplate, existing: list[ObjectInstance],
                  rng: np.random.Generator, attempts: int = 40) -> tuple[float, float] | None:
    sp = rec.surface_polygon
    r = tpl.footprint_radius
    if sp.width <= 2 * r or sp.height <= 2 * r:
        return None
    on_this = [o for o in existing if o.support_id == rec.id]
    for _ in range(attempts):
        x = rng.uniform(sp.x0 + r, sp.x1 - r)
        y = rng.uniform(sp.y0 + r, sp.y1 - r)
        if all(np.hypot(o.x - x, o.y - y) >= o.footprint_radius + r
               for o in on_this):
            return float(x), float(y)
    return None


def sample_object_placements(scene: Scene, pool: list[ObjectTemplate], seed: int,
                             viewpoints: dict[str, list[Viewpoint]] | None = None,
                             ) -> tuple[list[ObjectInstance], list[str]]:
    """Scatter clutter objects over receptacle surfaces.

    The object count is drawn uniformly from :func:`object_count_range` of
    the total usable surface area; receptacles without viewpoints never
    receive objects. Placements are collision free on each surface. When the
    budget cannot be met by bounded rejection sampling the achieved count is
    kept and a warning is recorded.
    """
    if not pool:
        raise EpisodeGenerationError("empty object pool")
    rng = rng_from("placements", scene.id, seed)
    vps = viewpoints if viewpoints is not None else all_viewpoints(scene)
    usable = [r for r in scene.receptacles if vps.get(r.id)]
    if not usable:
        raise EpisodeGenerationError("no receptacle with viewpoints in scene")
    area = float(sum(r.surface_polygon.area for r in usable))
    lo, hi = object_count_range(area)
    n = int(rng.integers(lo, hi + 1))

    weights = np.array([r.surface_polygon.area for r in usable])
    weights = weights / weights.sum()
    placed: list[ObjectInstance] = []
    warnings: list[str] = []
    for k in range(n):
        tpl = pool[int(rng.integers(len(pool)))]
        done = False
        for _ in range(25):
            rec = usable[int(rng.choice(len(usable), p=weights))]
            spot = _try_place_on(rec, tpl, placed, rng)
            if spot is not None:
                x, y = spot
                placed.append(ObjectInstance(
                    id=f"obj_{len(placed):03d}", template_id=tpl.template_id,
                    category=tpl.category, footprint_radius=tpl.footprint_radius,
                    height=tpl.height, x=x, y=y, z=rec.surface_height,
                    yaw=float(rng.uniform(-np.pi, np.pi)),
                    support=ON_RECEPTACLE, support_id=rec.id))
                done = True
                break
        if not done:
            warnings.append(
                f"placement budget reduced from {n} to {len(placed)}")
            break
    return placed, warnings


def _spawn_robot(scene: Scene, target_vps: list[Viewpoint],
                 rng: np.random.Generator) -> tuple[float, float, float]:
    src = np.zeros(scene.nav_grid.shape, dtype=bool)
    h = scene.cell_size
    for vp in target_vps:
        i, j = cell_of(vp.x, vp.y, h)
        src[i, j] = True
    dist = bfs_meters(scene.nav_grid, src, h)
    eligible = scene.nav_grid & (dist >= MIN_SPAWN_GEODESIC) & np.isfinite(dist)
    idx = np.flatnonzero(eligible.ravel())
    if idx.size == 0:
        raise EpisodeGenerationError(
            "no navigable spawn cell at least 3 m geodesic from target viewpoints")
    pick = int(idx[int(rng.integers(idx.size))])
    i, j = divmod(pick, scene.nav_grid.shape[1])
    yaw = float(rng.uniform(-np.pi, np.pi))
    return ((j + 0.5) * h, (i + 0.5) * h, yaw)


def generate_episode(scene: Scene, splits: SplitAssignment, phase: str,
                     seed: int) -> Episode:
    """Generate one episode for the given split phase.

    Raises EpisodeGenerationError naming the failed constraint when no
    feasible (object, start receptacle, goal receptacle) triple exists.
    """
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    pool_ids = set(splits.pool(phase))
    pool = [t for t in scene.catalog.templates if t.template_id in pool_ids]
    if not pool:
        raise EpisodeGenerationError(f"empty template pool for phase {phase}")

    rng = rng_from("episode", scene.id, phase, seed)
    vps = all_viewpoints(scene)
    usable = [r for r in scene.receptacles if vps.get(r.id)]
    categories = sorted({r.category for r in usable})
    if not categories:
        raise EpisodeGenerationError("no reachable goal receptacle")

    start_cat = str(rng.choice(categories))
    goal_choices = [c for c in categories if c != start_cat] or categories
    goal_cat = str(rng.choice(goal_choices))

    placed, warnings = sample_object_placements(scene, pool, seed, vps)

    # Guarantee at least one target object on a start-category receptacle.
    tpl = pool[int(rng.integers(len(pool)))]
    start_recs = [r for r in usable if r.category == start_cat]
    target_obj: ObjectInstance | None = None
    for rec in start_recs:
        spot = _try_place_on(rec, tpl, placed, rng, attempts=80)
        if spot is not None:
            x, y = spot
            target_obj = ObjectInstance(
                id=f"obj_{len(placed):03d}", template_id=tpl.template_id,
                category=tpl.category, footprint_radius=tpl.footprint_radius,
                height=tpl.height, x=x, y=y, z=rec.surface_height,
                yaw=float(rng.uniform(-np.pi, np.pi)),
                support=ON_RECEPTACLE, support_id=rec.id)
            placed.append(target_obj)
            break
    if target_obj is None:
        raise EpisodeGenerationError(
            f"could not place a target object on any {start_cat}")

    # Every same-category object already sitting on a start receptacle is an
    # equally valid target.
    start_ids = {r.id for r in start_recs}
    targets = [o.id for o in placed
               if o.category == tpl.category and o.support_id in start_ids]

    target_vps = []
    for oid in targets:
        rid = next(o.support_id for o in placed if o.id == oid)
        target_vps.extend(vps.get(rid, []))
    if not target_vps:
        raise EpisodeGenerationError("target receptacle has no viewpoints")
    if not any(vps.get(r.id) for r in usable if r.category == goal_cat):
        raise EpisodeGenerationError("no reachable goal receptacle")

    robot_start = _spawn_robot(scene, target_vps, rng)
    return Episode(
        id=f"{scene.id}_{phase}_{seed:08d}",
        scene_id=scene.id, seed=seed, split=phase, objects=placed,
        target_object_ids=targets, target_category=tpl.category,
        start_receptacle_category=start_cat, goal_receptacle_category=goal_cat,
        robot_start=robot_start, viewpoints=vps, warnings=warnings)
