"""Procedural 2.5-D apartment scenes.

A scene is a rectangular apartment split into rooms by straight interior
walls with door gaps. Receptacles are axis-aligned boxes with a flat top
surface; the robot base treats walls and receptacle footprints as obstacles.
Everything lives on a 5 cm grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog, default_catalog
from .errors import SceneGenerationError
from .geometry import (
    CELL_SIZE,
    Rect,
    cell_center,
    chebyshev_dilate,
    largest_component,
    mark_rect,
    rle_decode,
    rle_encode,
)
from .seeding import rng_from, stable_hash

DEFAULT_ROBOT_RADIUS = 0.25
WALL_THICKNESS = 0.10
WALL_HEIGHT = 3.0
DOOR_WIDTH = 1.0
MIN_SURFACE_AREA = 0.04  # m^2; smaller receptacles are filtered out
SURFACE_INSET = 0.03  # usable top surface is the footprint inset by this

# Footprint (w, d) ranges and surface heights per receptacle category.
RECEPTACLE_SIZES = {
    "table": ((1.0, 1.6), (0.7, 1.0), 0.75),
    "counter": ((1.2, 2.0), (0.55, 0.65), 0.90),
    "sofa": ((1.6, 2.1), (0.8, 0.95), 0.45),
    "bed": ((1.9, 2.1), (1.4, 1.6), 0.55),
    "cabinet": ((0.8, 1.2), (0.4, 0.5), 1.00),
    "stool": ((0.35, 0.45), (0.35, 0.45), 0.50),
    "desk": ((1.1, 1.5), (0.6, 0.8), 0.74),
    "shelf": ((0.7, 1.0), (0.3, 0.4), 1.05),
}


@dataclass(frozen=True)
class WallSegment:
    """A straight wall with thickness, stored as its covering rectangle."""

    rect: Rect

    def to_list(self) -> list[float]:
        return self.rect.to_list()


@dataclass
class Receptacle:
    id: str
    category: str
    footprint: Rect
    surface_height: float
    surface_polygon: Rect
    room_id: str

    def __post_init__(self):
        sp, fp = self.surface_polygon, self.footprint
        if not (fp.x0 <= sp.x0 and sp.x1 <= fp.x1
                and fp.y0 <= sp.y0 and sp.y1 <= fp.y1):
            raise ValueError(f"surface polygon escapes footprint on {self.id}")
        if sp.area < MIN_SURFACE_AREA:
            raise ValueError(f"receptacle {self.id} below minimum placeable area")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "footprint": self.footprint.to_list(),
            "surface_height": self.surface_height,
            "surface_polygon": self.surface_polygon.to_list(),
            "room_id": self.room_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Receptacle":
        return cls(d["id"], d["category"], Rect.from_list(d["footprint"]),
                   float(d["surface_height"]),
                   Rect.from_list(d["surface_polygon"]), d["room_id"])


@dataclass
class Scene:
    id: str
    bounds: Rect
    rooms: list[Rect]
    wall_segments: list[WallSegment]
    receptacles: list[Receptacle]
    occupancy_grid: np.ndarray  # True = obstacle
    nav_grid: np.ndarray  # True = robot base may occupy the cell
    catalog: Catalog
    cell_size: float = CELL_SIZE
    robot_radius: float = DEFAULT_ROBOT_RADIUS

    def receptacle_by_id(self, rid: str) -> Receptacle:
        for r in self.receptacles:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def receptacles_of(self, category: str) -> list[Receptacle]:
        return [r for r in self.receptacles if r.category == category]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.occupancy_grid.shape

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "cell_size": self.cell_size,
            "robot_radius": self.robot_radius,
            "bounds": self.bounds.to_list(),
            "rooms": [r.to_list() for r in self.rooms],
            "wall_segments": [w.to_list() for w in self.wall_segments],
            "receptacles": [r.to_dict() for r in self.receptacles],
            "grid_shape": list(self.occupancy_grid.shape),
            "occupancy_rle": rle_encode(self.occupancy_grid),
            "nav_rle": rle_encode(self.nav_grid),
            "catalog": self.catalog.to_dict(),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        d = json.loads(text)
        shape = tuple(d["grid_shape"])
        return cls(
            id=d["id"],
            bounds=Rect.from_list(d["bounds"]),
            rooms=[Rect.from_list(r) for r in d["rooms"]],
            wall_segments=[WallSegment(Rect.from_list(w)) for w in d["wall_segments"]],
            receptacles=[Receptacle.from_dict(r) for r in d["receptacles"]],
            occupancy_grid=rle_decode(d["occupancy_rle"], shape),
            nav_grid=rle_decode(d["nav_rle"], shape),
            catalog=Catalog.from_dict(d["catalog"]),
            cell_size=float(d["cell_size"]),
            robot_radius=float(d["robot_radius"]),
        )


@dataclass
class SceneGenParams:
    width: float = 8.0
    height: float = 8.0
    room_count: int = 2
    receptacle_count: int = 5
    receptacle_categories: tuple[str, ...] = tuple(RECEPTACLE_SIZES)
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    max_retries: int = 20

    def __post_init__(self):
        if not (1 <= self.room_count <= 5):
            raise ValueError("room_count must be in 1..5")
        if not (3.0 <= self.width <= 20.0 and 3.0 <= self.height <= 20.0):
            raise ValueError("apartment bounds must be within 3x3..20x20 m")
        if self.receptacle_count < 1:
            raise ValueError("need at least one receptacle")


def build_nav_grid(occupancy: np.ndarray, robot_radius: float,
                   cell_size: float = CELL_SIZE) -> np.ndarray:
    """Navigable cells for a cylindrical robot.

    Obstacles are dilated by ceil(radius / cell) cells with a Chebyshev disk,
    then only the largest 4-connected free component is kept.
    """
    radius_cells = int(np.ceil(robot_radius / cell_size)) if robot_radius > 0 else 0
    blocked = chebyshev_dilate(occupancy.astype(bool), radius_cells)
    nav = largest_component(~blocked)
    if not nav.any():
        raise SceneGenerationError("no navigable cell remains after dilation")
    return nav


def _split_rooms(bounds: Rect, room_count: int, rng: np.random.Generator) -> list[Rect]:
    rooms = [bounds]
    while len(rooms) < room_count:
        rooms.sort(key=lambda r: -r.area)
        target = rooms.pop(0)
        vertical = target.width >= target.height
        extent = target.width if vertical else target.height
        if extent < 3.0:  # too narrow to split into usable rooms
            rooms.append(target)
            break
        frac = rng.uniform(0.35, 0.65)
        if vertical:
            cut = round((target.x0 + frac * target.width) / CELL_SIZE) * CELL_SIZE
            rooms += [Rect(target.x0, target.y0, cut, target.y1),
                      Rect(cut, target.y0, target.x1, target.y1)]
        else:
            cut = round((target.y0 + frac * target.height) / CELL_SIZE) * CELL_SIZE
            rooms += [Rect(target.x0, target.y0, target.x1, cut),
                      Rect(target.x0, cut, target.x1, target.y1)]
    return rooms


def _interior_walls(rooms: list[Rect], bounds: Rect,
                    rng: np.random.Generator) -> list[WallSegment]:
    """Walls along shared room edges, each pierced by one door gap."""
    walls: list[WallSegment] = []
    ht = WALL_THICKNESS / 2.0
    seen: set[tuple] = set()
    for a_idx in range(len(rooms)):
        for b_idx in range(a_idx + 1, len(rooms)):
            a, b = rooms[a_idx], rooms[b_idx]
            # Vertical shared edge
            if abs(a.x1 - b.x0) < 1e-9 or abs(b.x1 - a.x0) < 1e-9:
                x = a.x1 if abs(a.x1 - b.x0) < 1e-9 else b.x1
                lo, hi = max(a.y0, b.y0), min(a.y1, b.y1)
                if hi - lo > 1e-9:
                    key = ("v", round(x, 3), round(lo, 3), round(hi, 3))
                    if key in seen:
                        continue
                    seen.add(key)
                    walls += _pierced_wall(True, x, lo, hi, ht, rng)
            # Horizontal shared edge
            if abs(a.y1 - b.y0) < 1e-9 or abs(b.y1 - a.y0) < 1e-9:
                y = a.y1 if abs(a.y1 - b.y0) < 1e-9 else b.y1
                lo, hi = max(a.x0, b.x0), min(a.x1, b.x1)
                if hi - lo > 1e-9:
                    key = ("h", round(y, 3), round(lo, 3), round(hi, 3))
                    if key in seen:
                        continue
                    seen.add(key)
                    walls += _pierced_wall(False, y, lo, hi, ht, rng)
    return walls


def _pierced_wall(vertical: bool, pos: float, lo: float, hi: float,
                  ht: float, rng: np.random.Generator) -> list[WallSegment]:
    span = hi - lo
    door = min(DOOR_WIDTH, span - 2 * WALL_THICKNESS)
    if door <= 0.5:  # no room for a door; leave the edge open
        return []
    margin = 0.3
    gap_lo = lo + margin + rng.uniform(0.0, max(span - door - 2 * margin, 0.0))
    gap_lo = round(gap_lo / CELL_SIZE) * CELL_SIZE
    gap_hi = gap_lo + door
    segs = []
    for s0, s1 in ((lo, gap_lo), (gap_hi, hi)):
        if s1 - s0 > 1e-9:
            if vertical:
                segs.append(WallSegment(Rect(pos - ht, s0, pos + ht, s1)))
            else:
                segs.append(WallSegment(Rect(s0, pos - ht, s1, pos + ht)))
    return segs


def _perimeter_walls(bounds: Rect) -> list[WallSegment]:
    t = WALL_THICKNESS
    return [
        WallSegment(Rect(bounds.x0, bounds.y0, bounds.x1, bounds.y0 + t)),
        WallSegment(Rect(bounds.x0, bounds.y1 - t, bounds.x1, bounds.y1)),
        WallSegment(Rect(bounds.x0, bounds.y0, bounds.x0 + t, bounds.y1)),
        WallSegment(Rect(bounds.x1 - t, bounds.y0, bounds.x1, bounds.y1)),
    ]


def _door_clearances(interior_walls: list[WallSegment],
                     rooms: list[Rect]) -> list[Rect]:
    """Regions near door gaps that receptacles must keep clear.

    Door gaps are the parts of shared room edges not covered by interior
    wall segments, so a clearance square around each interior wall end point
    covers every doorway without recomputing the gaps.
    """
    clears = []
    for w in interior_walls:
        r = w.rect
        if r.height >= r.width:  # vertical wall: door gaps at y ends
            ends = ((r.center[0], r.y0), (r.center[0], r.y1))
        else:
            ends = ((r.x0, r.center[1]), (r.x1, r.center[1]))
        for (x, y) in ends:
            clears.append(Rect(x - 0.7, y - 0.7, x + 0.7, y + 0.7))
    return clears


def _place_receptacles(rooms: list[Rect], params: SceneGenParams,
                       clearances: list[Rect],
                       rng: np.random.Generator) -> list[Receptacle]:
    placed: list[Receptacle] = []
    rects: list[Rect] = []
    for k in range(params.receptacle_count):
        category = str(rng.choice(list(params.receptacle_categories)))
        (w_lo, w_hi), (d_lo, d_hi), surf_h = RECEPTACLE_SIZES[category]
        ok = False
        for _ in range(200):
            w = rng.uniform(w_lo, w_hi)
            d = rng.uniform(d_lo, d_hi)
            if rng.random() < 0.5:
                w, d = d, w
            room_idx = int(rng.integers(len(rooms)))
            room = rooms[room_idx].shrunk(WALL_THICKNESS + 0.05)
            if room.width <= w or room.height <= d:
                continue
            x0 = rng.uniform(room.x0, room.x1 - w)
            y0 = rng.uniform(room.y0, room.y1 - d)
            # Snap to the grid so footprints rasterize without slivers.
            x0 = round(x0 / CELL_SIZE) * CELL_SIZE
            y0 = round(y0 / CELL_SIZE) * CELL_SIZE
            fp = Rect(x0, y0, x0 + w, y0 + d)
            grown = fp.expanded(0.10)
            if any(grown.overlaps(r) for r in rects):
                continue
            if any(fp.overlaps(c) for c in clearances):
                continue
            surface = fp.shrunk(SURFACE_INSET)
            if surface.area < MIN_SURFACE_AREA:
                continue
            placed.append(Receptacle(
                id=f"rec_{k:03d}", category=category, footprint=fp,
                surface_height=surf_h, surface_polygon=surface,
                room_id=f"room_{room_idx}"))
            rects.append(fp)
            ok = True
            break
        if not ok:
            raise SceneGenerationError(
                f"unsatisfiable: could not place receptacle {k} "
                f"({category}) after 200 attempts")
    return placed


def rasterize_occupancy(bounds: Rect, walls: list[WallSegment],
                        receptacles: list[Receptacle],
                        cell_size: float = CELL_SIZE) -> np.ndarray:
    ny = int(round(bounds.y1 / cell_size))
    nx = int(round(bounds.x1 / cell_size))
    occ = np.zeros((ny, nx), dtype=bool)
    for w in walls:
        mark_rect(occ, w.rect, True, cell_size)
    for r in receptacles:
        mark_rect(occ, r.footprint, True, cell_size)
    return occ


def generate_scene(seed: int, params: SceneGenParams | None = None,
                   catalog: Catalog | None = None) -> Scene:
    """Generate a deterministic scene; raises SceneGenerationError when the
    receptacle constraints cannot be met within the retry budget."""
    params = params or SceneGenParams()
    catalog = catalog or default_catalog()
    unknown = set(params.receptacle_categories) - set(catalog.receptacle_categories)
    if unknown:
        raise SceneGenerationError(f"categories not in catalog: {sorted(unknown)}")

    last_err: Exception | None = None
    for attempt in range(params.max_retries):
        rng = rng_from("scene", seed, attempt)
        bounds = Rect(0.0, 0.0, params.width, params.height)
        rooms = _split_rooms(bounds, params.room_count, rng)
        interior = _interior_walls(rooms, bounds, rng)
        walls = _perimeter_walls(bounds) + interior
        clearances = _door_clearances(interior, rooms)
        try:
            receptacles = _place_receptacles(rooms, params, clearances, rng)
            occ = rasterize_occupancy(bounds, walls, receptacles)
            nav = build_nav_grid(occ, params.robot_radius)
            # Any receptacle must sit inside the apartment interior.
            scene = Scene(
                id=f"scene_{stable_hash(seed, params.width, params.height, params.room_count, params.receptacle_count) & 0xFFFFFFFF:08x}",
                bounds=bounds, rooms=rooms, wall_segments=walls,
                receptacles=receptacles, occupancy_grid=occ, nav_grid=nav,
                catalog=catalog, robot_radius=params.robot_radius)
            return scene
        except SceneGenerationError as e:
            last_err = e
            continue
    raise SceneGenerationError(
        f"unsatisfiable scene constraints after {params.max_retries} retries: {last_err}")


@dataclass(frozen=True)
class Viewpoint:
    x: float
    y: float
    receptacle_id: str

    def to_list(self) -> list:
        return [self.x, self.y, self.receptacle_id]


VIEWPOINT_SPACING = 0.25
VIEWPOINT_RING = (0.3, 1.5)


def generate_viewpoints(scene: Scene, receptacle: Receptacle) -> list[Viewpoint]:
    """Navigable standing positions on a 0.25 m lattice around a receptacle.

    Candidates are lattice points anchored at the footprint center; a point
    survives when its distance to the footprint is within the ring band and
    its grid cell is navigable. The list may legitimately be empty.
    """
    cx, cy = receptacle.footprint.center
    lo, hi = VIEWPOINT_RING
    out: list[Viewpoint] = []
    reach = hi + max(receptacle.footprint.width, receptacle.footprint.height)
    n = int(np.ceil(reach / VIEWPOINT_SPACING))
    ny, nx = scene.nav_grid.shape
    for di in range(-n, n + 1):
        for dj in range(-n, n + 1):
            x = cx + dj * VIEWPOINT_SPACING
            y = cy + di * VIEWPOINT_SPACING
            d = receptacle.footprint.distance_to_point(x, y)
            if not (lo <= d <= hi):
                continue
            i = int(np.floor(y / scene.cell_size))
            j = int(np.floor(x / scene.cell_size))
            if 0 <= i < ny and 0 <= j < nx and scene.nav_grid[i, j]:
                out.append(Viewpoint(round(x, 6), round(y, 6), receptacle.id))
    return out


def all_viewpoints(scene: Scene) -> dict[str, list[Viewpoint]]:
    return {r.id: generate_viewpoints(scene, r) for r in scene.receptacles}
