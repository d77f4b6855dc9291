"""Heuristic top-down grasp scoring and placement-point estimation.

Grasps are scored on a voxelized top slice of the target point cloud: a
candidate is good where material fills the region between the fingers and
the two finger landing strips are empty. Placement picks the cloud point
with the most same-height neighbors, i.e. the middle of the largest flat
slab.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import CameraModel, Observation, camera_rays
from .errors import WorkspaceError

GRASP_VOXEL = 0.005  # m
TOP_PERCENTILE = 90.0  # keep voxels at or above this z percentile
SCORE_THRESHOLD = 0.4
PLACEMENT_SAMPLES = 50
PLACEMENT_XY_RADIUS = 0.10  # m
PLACEMENT_Z_BAND = 0.03  # m


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float, robot base frame
    labels: np.ndarray | None = None  # (n,) instance ids

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).reshape(-1)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GripperGeometry:
    finger_width: float = 0.01
    max_aperture: float = 0.08
    finger_depth: float = 0.04

    def __post_init__(self):
        if min(self.finger_width, self.max_aperture, self.finger_depth) <= 0:
            raise ValueError("gripper dimensions must be positive")
        if self.max_aperture <= 2 * self.finger_width:
            raise ValueError("aperture must exceed twice the finger width")


@dataclass(frozen=True)
class GraspCandidate:
    voxel: tuple[int, int]  # (ix, iy) 2D voxel indices
    center: tuple[float, float]  # world/base meters
    z_top: float
    grasp_yaw: float  # 0 or pi/2: finger separation axis
    score: float


def cloud_from_observation(obs: Observation, instance_ids: set[int],
                           max_points: int | None = None) -> PointCloud:
    """Backproject the labeled pixels of an observation into the base frame.

    The base frame has x along the robot heading, y to its left, z up, with
    the origin under the base center on the floor.
    """
    cam: CameraModel = obs.camera
    dirs = camera_rays(cam, obs.joints["head_pan"], obs.joints["head_tilt"])
    sem = np.asarray(obs.semantic)
    depth = np.asarray(obs.depth, dtype=np.float64)
    mask = np.isin(sem, list(instance_ids)) & (depth < cam.max_range - 1e-6)
    if not mask.any():
        return PointCloud(np.empty((0, 3)), np.empty((0,), dtype=np.int64))
    origin = np.array([0.0, 0.0, cam.mount_height])
    pts = origin[None, :] + depth[mask][:, None] * dirs[mask]
    labels = sem[mask].astype(np.int64)
    if max_points is not None and pts.shape[0] > max_points:
        idx = np.linspace(0, pts.shape[0] - 1, max_points).astype(int)
        pts, labels = pts[idx], labels[idx]
    return PointCloud(pts, labels)


def _voxelize_top(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Occupied-voxel top slice projected to a dense 2D grid.

    Returns (occ2d, origin_voxel, z_top2d): a boolean grid over (ix, iy),
    the voxel index of its [0, 0] corner, and per-column top height.
    """
    vox = np.floor(cloud.points / GRASP_VOXEL).astype(np.int64)
    vox = np.unique(vox, axis=0)
    z_cut = np.percentile(vox[:, 2], TOP_PERCENTILE)
    top = vox[vox[:, 2] >= z_cut]
    lo = top[:, :2].min(axis=0)
    hi = top[:, :2].max(axis=0)
    shape = (hi - lo + 1)
    occ = np.zeros((int(shape[0]), int(shape[1])), dtype=bool)
    z_top = np.full(occ.shape, -np.inf)
    ix = top[:, 0] - lo[0]
    iy = top[:, 1] - lo[1]
    occ[ix, iy] = True
    np.maximum.at(z_top, (ix, iy), (top[:, 2] + 1) * GRASP_VOXEL)
    return occ, lo, z_top


def _axis_scores(occ: np.ndarray, gripper: GripperGeometry) -> np.ndarray:
    """Raw scores with the finger-separation axis along occ's first axis."""
    ha = max(int(round(gripper.max_aperture / 2 / GRASP_VOXEL)), 1)
    fw = max(int(round(gripper.finger_width / GRASP_VOXEL)), 1)
    hd = max(int(round(gripper.finger_depth / 2 / GRASP_VOXEL)), 1)
    pad = ha + fw
    g = np.pad(occ, ((pad, pad), (hd, hd)))

    # A depth row is "filled" if any voxel lies between the fingers on it.
    row_filled = ndimage.maximum_filter1d(g.astype(np.uint8), 2 * ha + 1,
                                          axis=0, mode="constant")
    occupancy_frac = ndimage.uniform_filter1d(row_filled.astype(np.float64),
                                              2 * hd + 1, axis=1,
                                              mode="constant")

    # Finger strips: occupied fraction of the 2 x fw x depth landing cells.
    colsum = ndimage.uniform_filter1d(g.astype(np.float64), 2 * hd + 1,
                                      axis=1, mode="constant")
    strip = np.zeros_like(colsum)
    for k in range(1, fw + 1):
        strip += np.roll(colsum, ha + k, axis=0)
        strip += np.roll(colsum, -(ha + k), axis=0)
    emptiness_frac = 1.0 - strip / (2 * fw)

    raw = occupancy_frac * emptiness_frac
    return raw[pad:pad + occ.shape[0], hd:hd + occ.shape[1]]


def _smooth(raw: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """Multiply each candidate score by the mean of its 4-adjacent candidate
    scores; missing neighbors count as zero."""
    s = np.where(occ, raw, 0.0)
    acc = np.zeros_like(s)
    acc[1:, :] += s[:-1, :]
    acc[:-1, :] += s[1:, :]
    acc[:, 1:] += s[:, :-1]
    acc[:, :-1] += s[:, 1:]
    return s * (acc / 4.0)


def score_grasps(cloud: PointCloud, gripper: GripperGeometry | None = None,
                 threshold: float = SCORE_THRESHOLD) -> list[GraspCandidate]:
    """Score top-down grasp candidates on a point cloud.

    Follows the voxel pipeline: 5 mm voxels, top decile by height, 2D
    projection, occupancy/emptiness scoring over two yaw bins (finger
    separation along x, then y), neighbor smoothing, then thresholding.
    Returns candidates sorted by descending score (deterministic ties).
    Raises on an empty cloud; an empty result list means no graspable spot.
    """
    if len(cloud) == 0:
        raise ValueError("cannot score grasps on an empty cloud")
    gripper = gripper or GripperGeometry()
    occ, lo, z_top = _voxelize_top(cloud)

    out: list[GraspCandidate] = []
    for yaw_bin, grid in ((0.0, occ), (np.pi / 2, occ.T)):
        raw = _axis_scores(grid, gripper)
        smoothed = _smooth(raw, grid)
        if yaw_bin > 0:
            smoothed = smoothed.T
        for ix, iy in np.argwhere(occ & (smoothed >= threshold)):
            vx, vy = int(ix + lo[0]), int(iy + lo[1])
            out.append(GraspCandidate(
                voxel=(vx, vy),
                center=((vx + 0.5) * GRASP_VOXEL, (vy + 0.5) * GRASP_VOXEL),
                z_top=float(z_top[ix, iy]),
                grasp_yaw=float(yaw_bin),
                score=float(smoothed[ix, iy])))
    out.sort(key=lambda c: (-c.score, c.voxel[0], c.voxel[1], c.grasp_yaw))
    return out


def estimate_placement_point(cloud: PointCloud,
                             rng: np.random.Generator) -> tuple[float, float, float]:
    """Pick a placement point at the center of the biggest flat slab.

    Samples 50 cloud points (with replacement when the cloud is smaller) and
    scores each by how many cloud points sit within the XY radius and the
    3 cm height band; the best-scoring sample wins, first sample on ties.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot estimate placement on an empty cloud")
    replace = n < PLACEMENT_SAMPLES
    idx = rng.choice(n, size=PLACEMENT_SAMPLES, replace=replace)
    pts = cloud.points
    best_k = -1
    best_count = -1
    for k in idx:
        p = pts[k]
        near_xy = np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1]) <= PLACEMENT_XY_RADIUS
        near_z = np.abs(pts[:, 2] - p[2]) <= PLACEMENT_Z_BAND
        count = int(np.count_nonzero(near_xy & near_z))
        if count > best_count:
            best_count, best_k = count, int(k)
    p = pts[best_k]
    return (float(p[0]), float(p[1]), float(p[2]))


def reach_for_point(base_to_point_planar: float, point_z: float,
                    clearance: float, lift_limits: tuple[float, float],
                    extension_limits: tuple[float, float],
                    arm_base_length: float,
                    ee_z_offset: float) -> tuple[float, float]:
    """Lift and extension targets that put the gripper ``clearance`` above a
    point at the given planar distance; raises WorkspaceError when the arm
    cannot reach it."""
    extension = base_to_point_planar - arm_base_length
    lift = point_z + clearance - ee_z_offset
    if not (extension_limits[0] - 1e-9 <= extension <= extension_limits[1] + 1e-9):
        raise WorkspaceError(
            f"required extension {extension:.3f} m outside "
            f"{extension_limits}")
    if not (lift_limits[0] - 1e-9 <= lift <= lift_limits[1] + 1e-9):
        raise WorkspaceError(
            f"required lift {lift:.3f} m outside {lift_limits}")
    return (float(np.clip(lift, *lift_limits)),
            float(np.clip(extension, *extension_limits)))
