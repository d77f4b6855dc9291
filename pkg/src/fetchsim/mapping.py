"""Agent-side semantic occupancy map.

A binary K x M x M grid at 5 cm resolution. K = C + 4: one channel per
category plus obstacles, explored area, and the agent's current and past
locations. The map frame is anchored at the episode start pose: the agent
begins at the center cell facing map-east, so observation poses relative to
start drop straight in. The map never scrolls; leaving it is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraModel, Observation, camera_rays
from .errors import MapBoundsError
from .geometry import CELL_SIZE

DEFAULT_MAP_CELLS = 480  # 24 m square at 5 cm


@dataclass
class MapConfig:
    categories: list[str]
    cells: int = DEFAULT_MAP_CELLS
    cell_size: float = CELL_SIZE
    obstacle_band: tuple[float, float] = (0.1, 1.5)  # z range marking obstacles
    explored_range: float = 5.0  # visibility cap for the explored channel

    def __post_init__(self):
        if self.cells % 2 != 0:
            raise ValueError("map size must be even")
        if not self.obstacle_band[0] < self.obstacle_band[1]:
            raise ValueError("bad obstacle band")

    @property
    def n_channels(self) -> int:
        return len(self.categories) + 4


class SemanticMap:
    """Mutable single-writer map; snapshots may be copied out freely."""

    def __init__(self, config: MapConfig):
        self.config = config
        m = config.cells
        self.grid = np.zeros((config.n_channels, m, m), dtype=bool)
        self._channel_index = {c: k for k, c in enumerate(config.categories)}
        c = len(config.categories)
        self.OBSTACLES = c
        self.EXPLORED = c + 1
        self.CURRENT = c + 2
        self.PAST = c + 3

    def channel(self, key: int | str) -> int:
        if isinstance(key, str):
            named = {"obstacles": self.OBSTACLES, "explored": self.EXPLORED,
                     "current_location": self.CURRENT,
                     "past_locations": self.PAST}
            if key in named:
                return named[key]
            if key in self._channel_index:
                return self._channel_index[key]
            raise KeyError(f"unknown channel {key!r}")
        if not (0 <= key < self.grid.shape[0]):
            raise IndexError(f"channel {key} out of range")
        return key

    def query_channel(self, key: int | str) -> np.ndarray:
        """Read-only view of one M x M channel."""
        view = self.grid[self.channel(key)].view()
        view.setflags(write=False)
        return view

    def category_mask(self, category: str) -> np.ndarray:
        return self.query_channel(category)

    def cell_of_map_point(self, x: float, y: float) -> tuple[int, int]:
        m = self.config.cells
        h = self.config.cell_size
        i = int(np.floor(y / h)) + m // 2
        j = int(np.floor(x / h)) + m // 2
        if not (0 <= i < m and 0 <= j < m):
            raise MapBoundsError(
                f"map point ({x:.2f}, {y:.2f}) outside the fixed-origin map")
        return i, j

    def cell_center_map(self, i: int, j: int) -> tuple[float, float]:
        m = self.config.cells
        h = self.config.cell_size
        return ((j - m // 2 + 0.5) * h, (i - m // 2 + 0.5) * h)


def update_map(smap: SemanticMap, obs: Observation,
               pose_in_map: tuple[float, float, float] | None = None,
               ) -> SemanticMap:
    """Fuse one observation into the map (in place; returns the map).

    Valid depth pixels are backprojected through the camera model into map
    space. Category channels accumulate labeled points by perceived
    category; the obstacle channel accumulates points in the obstacle height
    band; explored covers ray-swept free space up to the nearest obstruction
    per image column, capped at the visibility range.
    """
    cfg = smap.config
    if pose_in_map is None:
        pose_in_map = obs.base_pose_rel_start
    px, py, pyaw = pose_in_map
    ri, rj = smap.cell_of_map_point(px, py)  # raises when outside the map

    cam: CameraModel = obs.camera
    dirs = camera_rays(cam, pyaw + obs.joints["head_pan"],
                       obs.joints["head_tilt"])
    depth = np.asarray(obs.depth, dtype=np.float64)
    origin = np.array([px, py, cam.mount_height])
    pts = origin[None, None, :] + depth[:, :, None] * dirs
    hit = depth < (cam.max_range - 1e-6)

    m = cfg.cells
    h = cfg.cell_size
    half = m // 2

    def to_cells(xs, ys):
        ii = np.floor(ys / h).astype(np.int64) + half
        jj = np.floor(xs / h).astype(np.int64) + half
        ok = (ii >= 0) & (ii < m) & (jj >= 0) & (jj < m)
        return ii, jj, ok

    # Category channels from labeled hit pixels.
    sem = np.asarray(obs.semantic)
    for inst_id, category in obs.detections.items():
        if category not in smap._channel_index:
            continue
        mask = (sem == inst_id) & hit
        if not mask.any():
            continue
        ii, jj, ok = to_cells(pts[:, :, 0][mask], pts[:, :, 1][mask])
        smap.grid[smap._channel_index[category], ii[ok], jj[ok]] = True

    # Obstacles: any hit point whose height falls in the band.
    z_lo, z_hi = cfg.obstacle_band
    zmask = hit & (pts[:, :, 2] >= z_lo) & (pts[:, :, 2] <= z_hi)
    if zmask.any():
        ii, jj, ok = to_cells(pts[:, :, 0][zmask], pts[:, :, 1][zmask])
        smap.grid[smap.OBSTACLES, ii[ok], jj[ok]] = True

    # Explored: free space swept per image column up to the first point in
    # the obstacle band (or the deepest return, or the range cap).
    planar = np.hypot(pts[:, :, 0] - px, pts[:, :, 1] - py)
    col_free = np.where(hit, planar, cfg.explored_range).max(axis=0)
    col_obst = np.where(zmask, planar, np.inf).min(axis=0)
    extent = np.minimum(np.minimum(col_free, col_obst), cfg.explored_range)

    center = cam.height // 2
    az = np.arctan2(dirs[center, :, 1], dirs[center, :, 0])
    n_steps = int(np.ceil(cfg.explored_range / (h / 2.0)))
    steps = (np.arange(1, n_steps + 1) * (h / 2.0))
    sx = px + np.cos(az)[:, None] * steps[None, :]
    sy = py + np.sin(az)[:, None] * steps[None, :]
    within = steps[None, :] <= extent[:, None]
    ii, jj, ok = to_cells(sx[within], sy[within])
    smap.grid[smap.EXPLORED, ii[ok], jj[ok]] = True

    # Cells holding returned points are explored too (hit cells).
    if hit.any():
        ii, jj, ok = to_cells(pts[:, :, 0][hit & (planar <= cfg.explored_range)],
                              pts[:, :, 1][hit & (planar <= cfg.explored_range)])
        smap.grid[smap.EXPLORED, ii[ok], jj[ok]] = True

    # Agent location channels.
    smap.grid[smap.CURRENT] = False
    smap.grid[smap.CURRENT, ri, rj] = True
    smap.grid[smap.PAST, ri, rj] = True
    smap.grid[smap.EXPLORED, ri, rj] = True
    return smap
