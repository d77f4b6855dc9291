"""Depth + instance-segmentation rendering over the 2.5-D heightfield.

Walls are full-height columns, receptacles are solid boxes up to their
surface height, objects are boxes sitting on their support. Depth is the
Euclidean distance along the ray; rays that hit nothing within range return
``max_range`` with semantic id 0. Instance ids label the first surface hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .episodes import HELD, ObjectInstance
from .geometry import CELL_SIZE, mark_rect
from .scene import WALL_HEIGHT, Scene


@dataclass(frozen=True)
class CameraModel:
    width: int = 160
    height: int = 120
    hfov: float = np.deg2rad(69.0)
    mount_height: float = 1.2
    max_range: float = 10.0

    @property
    def fx(self) -> float:
        return (self.width / 2.0) / np.tan(self.hfov / 2.0)

    @property
    def fy(self) -> float:
        return self.fx  # square pixels

    @property
    def pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class PerceptionNoiseProfile:
    """Per-frame perception corruption.

    Each instance visible in a frame is independently dropped (its pixels
    relabeled background) with ``dropout_prob``, otherwise relabeled to a
    random other category with ``misclassify_prob``. The ground-truth
    profile is (0, 0).
    """

    dropout_prob: float = 0.0
    misclassify_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for p in (self.dropout_prob, self.misclassify_prob):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")

    @property
    def is_ground_truth(self) -> bool:
        return self.dropout_prob == 0.0 and self.misclassify_prob == 0.0


GROUND_TRUTH = PerceptionNoiseProfile(0.0, 0.0)


@dataclass
class Observation:
    """Immutable sensor snapshot handed to agents."""

    depth: np.ndarray  # (H, W) float32, meters along the ray
    semantic: np.ndarray  # (H, W) uint16 instance ids, 0 = background
    detections: dict[int, str]  # instance id -> perceived category
    base_pose_rel_start: tuple[float, float, float]
    joints: dict[str, float]
    holding: bool
    goal_spec: dict
    step_count: int
    camera: CameraModel

    def visible_ids(self) -> set[int]:
        ids = np.unique(self.semantic)
        return {int(i) for i in ids if i != 0}

    def pixel_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.semantic, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}


def camera_rays(cam: CameraModel, cam_yaw: float,
                tilt: float) -> np.ndarray:
    """Unit ray directions, shape (H, W, 3). Positive tilt looks up."""
    cy, sy = np.cos(cam_yaw), np.sin(cam_yaw)
    ct, st = np.cos(tilt), np.sin(tilt)
    fwd = np.array([cy * ct, sy * ct, st])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(fwd, right)
    u = (np.arange(cam.width) + 0.5 - cam.width / 2.0) / cam.fx
    v = (np.arange(cam.height) + 0.5 - cam.height / 2.0) / cam.fy
    dirs = (fwd[None, None, :]
            + u[None, :, None] * right[None, None, :]
            + v[:, None, None] * down[None, None, :])
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    return dirs


@njit(cache=True)
def _raycast_static(ox, oy, oz, dirs, tops, sem, h, max_range):
    n = dirs.shape[0]
    ny, nx = tops.shape
    t_hit = np.full(n, max_range)
    id_hit = np.zeros(n, dtype=np.int32)
    for r in range(n):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        i = int(np.floor(oy / h))
        j = int(np.floor(ox / h))
        step_i = 1 if dy > 0 else -1
        step_j = 1 if dx > 0 else -1
        big = 1e30
        t_max_i = ((i + (step_i > 0)) * h - oy) / dy if dy != 0.0 else big
        t_max_j = ((j + (step_j > 0)) * h - ox) / dx if dx != 0.0 else big
        t_delta_i = abs(h / dy) if dy != 0.0 else big
        t_delta_j = abs(h / dx) if dx != 0.0 else big
        t_in = 0.0
        while t_in < max_range:
            if i < 0 or j < 0 or i >= ny or j >= nx:
                break
            t_out = min(t_max_i, t_max_j)
            top = tops[i, j]
            z_in = oz + dz * t_in
            if z_in <= top:
                t_hit[r] = t_in
                id_hit[r] = sem[i, j]
                break
            if dz < 0.0:
                t_top = (top - oz) / dz
                if t_in <= t_top <= min(t_out, max_range):
                    t_hit[r] = t_top
                    id_hit[r] = sem[i, j]
                    break
            if t_max_i < t_max_j:
                t_in = t_max_i
                t_max_i += t_delta_i
                i += step_i
            else:
                t_in = t_max_j
                t_max_j += t_delta_j
                j += step_j
    return t_hit, id_hit


@dataclass
class HeightField:
    """Static scene geometry prepared for rendering."""

    tops: np.ndarray  # (ny, nx) float64 column top heights
    sem: np.ndarray  # (ny, nx) int32 instance id of the column (0 = none)
    cell_size: float = CELL_SIZE

    @classmethod
    def from_scene(cls, scene: Scene,
                   receptacle_ids: dict[str, int]) -> "HeightField":
        ny, nx = scene.grid_shape
        tops = np.zeros((ny, nx))
        sem = np.zeros((ny, nx), dtype=np.int32)
        for rec in scene.receptacles:
            m = np.zeros((ny, nx), dtype=bool)
            mark_rect(m, rec.footprint, True, scene.cell_size)
            tops[m] = rec.surface_height
            sem[m] = receptacle_ids[rec.id]
        for w in scene.wall_segments:
            m = np.zeros((ny, nx), dtype=bool)
            mark_rect(m, w.rect, True, scene.cell_size)
            tops[m] = WALL_HEIGHT
            sem[m] = 0
        return cls(tops, sem, scene.cell_size)


def _intersect_object_boxes(origin: np.ndarray, dirs: np.ndarray,
                            objects: list[ObjectInstance],
                            object_ids: dict[str, int],
                            max_range: float,
                            fwd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slab-test every potentially visible object box against all rays."""
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    id_best = np.zeros(n, dtype=np.int32)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs  # +-inf on axis-parallel rays is what slab math wants
    ix, iy, iz = inv[:, 0], inv[:, 1], inv[:, 2]
    for obj in objects:
        if obj.support == HELD:
            continue
        r = obj.footprint_radius
        cx, cy = obj.x - origin[0], obj.y - origin[1]
        dist = np.hypot(cx, cy)
        if dist - r > max_range:
            continue
        # Behind the camera (with slack for the box extent).
        if cx * fwd[0] + cy * fwd[1] < -r - 0.05:
            continue
        t1 = (obj.x - r - origin[0]) * ix
        t2 = (obj.x + r - origin[0]) * ix
        txn, txf = np.minimum(t1, t2), np.maximum(t1, t2)
        t1 = (obj.y - r - origin[1]) * iy
        t2 = (obj.y + r - origin[1]) * iy
        tyn, tyf = np.minimum(t1, t2), np.maximum(t1, t2)
        t1 = (obj.z - origin[2]) * iz
        t2 = (obj.z + obj.height - origin[2]) * iz
        tzn, tzf = np.minimum(t1, t2), np.maximum(t1, t2)
        t_near = np.maximum(np.maximum(txn, tyn), tzn)
        t_far = np.minimum(np.minimum(txf, tyf), tzf)
        hit = (t_near <= t_far) & (t_far >= 0.0) & (t_near < max_range)
        if not hit.any():
            continue
        t_near = np.maximum(t_near, 0.0)
        better = hit & (t_near < t_best)
        t_best[better] = t_near[better]
        id_best[better] = object_ids[obj.id]
    return t_best, id_best


def render_observation(heightfield: HeightField, objects: list[ObjectInstance],
                       object_ids: dict[str, int],
                       categories_of: dict[int, str],
                       cam: CameraModel, base_x: float, base_y: float,
                       base_yaw: float, head_pan: float, head_tilt: float,
                       noise: PerceptionNoiseProfile,
                       noise_rng: np.random.Generator | None,
                       all_categories: list[str],
                       ) -> tuple[np.ndarray, np.ndarray, dict[int, str]]:
    """Render (depth, semantic, detections) from the given camera pose.

    ``categories_of`` maps instance id to true category; the returned
    detections dict reflects the noise model (dropout removes entries and
    pixels, misclassification rewrites the category only).
    """
    dirs = camera_rays(cam, base_yaw + head_pan, head_tilt)
    flat = np.ascontiguousarray(dirs.reshape(-1, 3))
    origin = np.array([base_x, base_y, cam.mount_height])
    t_s, id_s = _raycast_static(origin[0], origin[1], origin[2], flat,
                                heightfield.tops, heightfield.sem,
                                heightfield.cell_size, cam.max_range)
    cam_yaw = base_yaw + head_pan
    fwd = np.array([np.cos(cam_yaw), np.sin(cam_yaw)])
    t_o, id_o = _intersect_object_boxes(origin, flat, objects, object_ids,
                                        cam.max_range, fwd)
    obj_wins = t_o < t_s
    depth = np.where(obj_wins, t_o, t_s).astype(np.float32)
    semantic = np.where(obj_wins, id_o, id_s).astype(np.uint16)
    depth = depth.reshape(cam.height, cam.width)
    semantic = semantic.reshape(cam.height, cam.width)

    visible = [int(i) for i in np.unique(semantic) if i != 0]
    detections: dict[int, str] = {}
    if noise.is_ground_truth or noise_rng is None:
        for i in visible:
            detections[i] = categories_of[i]
        return depth, semantic, detections

    for i in visible:
        u = noise_rng.random()
        if u < noise.dropout_prob:
            semantic[semantic == i] = 0
            continue
        true_cat = categories_of[i]
        if noise_rng.random() < noise.misclassify_prob:
            others = [c for c in all_categories if c != true_cat]
            detections[i] = str(others[int(noise_rng.integers(len(others)))])
        else:
            detections[i] = true_cat
    return depth, semantic, detections
