"""Grid and rectangle primitives used by scenes, maps and planners.

Conventions, used everywhere in the package:

* world frame: x grows east, y grows north, yaw is CCW from +x (radians);
* grids are row-major ``(ny, nx)`` arrays where cell ``(i, j)`` covers
  ``x in [j*h, (j+1)*h)`` and ``y in [i*h, (i+1)*h)`` for cell size ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

CELL_SIZE = 0.05  # meters per grid cell, fixed for the whole artifact

# 4-connectivity structuring element, shared by flood fills and dilations.
CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in world meters."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"degenerate rect {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def shrunk(self, margin: float) -> "Rect":
        return Rect(self.x0 + margin, self.y0 + margin,
                    self.x1 - margin, self.y1 - margin)

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.x0 - margin, self.y0 - margin,
                    self.x1 + margin, self.y1 + margin)

    def overlaps(self, other: "Rect") -> bool:
        return not (self.x1 <= other.x0 or other.x1 <= self.x0
                    or self.y1 <= other.y0 or other.y1 <= self.y0)

    def distance_to_point(self, x: float, y: float) -> float:
        """Euclidean distance from (x, y) to the rectangle (0 inside)."""
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dy = max(self.y0 - y, 0.0, y - self.y1)
        return float(np.hypot(dx, dy))

    def to_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, v) -> "Rect":
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


def cell_of(x: float, y: float, h: float = CELL_SIZE) -> tuple[int, int]:
    """Grid cell (i, j) containing the world point (x, y)."""
    return (int(np.floor(y / h)), int(np.floor(x / h)))


def cell_center(i: int, j: int, h: float = CELL_SIZE) -> tuple[float, float]:
    return ((j + 0.5) * h, (i + 0.5) * h)


def mark_rect(grid: np.ndarray, rect: Rect, value: bool = True,
              h: float = CELL_SIZE) -> None:
    """Set all cells whose area intersects ``rect``."""
    ny, nx = grid.shape
    j0 = max(int(np.floor(rect.x0 / h)), 0)
    i0 = max(int(np.floor(rect.y0 / h)), 0)
    # Cells are half-open; a boundary exactly on a cell edge does not spill over.
    j1 = min(int(np.ceil(rect.x1 / h)), nx)
    i1 = min(int(np.ceil(rect.y1 / h)), ny)
    if i1 > i0 and j1 > j0:
        grid[i0:i1, j0:j1] = value


def chebyshev_dilate(mask: np.ndarray, radius_cells: int) -> np.ndarray:
    """Dilate a boolean mask by a Chebyshev disk (square) of given radius."""
    if radius_cells <= 0:
        return mask.copy()
    size = 2 * radius_cells + 1
    return ndimage.binary_dilation(mask, structure=np.ones((size, size), bool))


def euclidean_disk(radius_cells: float) -> np.ndarray:
    """Boolean disk footprint: offsets within Euclidean radius (in cells)."""
    r = int(np.floor(radius_cells))
    ii, jj = np.mgrid[-r:r + 1, -r:r + 1]
    return (ii * ii + jj * jj) <= radius_cells * radius_cells


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected True component of a boolean mask (empty-safe)."""
    labels, n = ndimage.label(mask, structure=CROSS)
    if n == 0:
        return np.zeros_like(mask)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == int(np.argmax(counts))


def bfs_hops(free: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """4-connected BFS hop count from a set of source cells.

    Returns an int array with -1 for unreachable cells. ``sources`` is a
    boolean mask; source cells must be free.
    """
    dist = np.full(free.shape, -1, dtype=np.int32)
    frontier = sources & free
    dist[frontier] = 0
    k = 0
    while frontier.any():
        k += 1
        grown = ndimage.binary_dilation(frontier, structure=CROSS)
        frontier = grown & free & (dist < 0)
        dist[frontier] = k
    return dist


def bfs_meters(free: np.ndarray, sources: np.ndarray,
               h: float = CELL_SIZE) -> np.ndarray:
    """BFS geodesic distance in meters (hops * cell size); inf if unreachable."""
    hops = bfs_hops(free, sources)
    out = np.full(free.shape, np.inf)
    reach = hops >= 0
    out[reach] = hops[reach] * h
    return out


def march_segment(navigable: np.ndarray, x0: float, y0: float,
                  x1: float, y1: float, h: float = CELL_SIZE,
                  step: float | None = None) -> tuple[float, float, bool]:
    """Walk a straight segment and stop before the first non-navigable cell.

    Returns ``(x, y, blocked)`` where (x, y) is the last reachable point on
    the segment and ``blocked`` tells whether the motion was truncated.
    """
    if step is None:
        step = h / 2.0
    length = float(np.hypot(x1 - x0, y1 - y0))
    if length == 0.0:
        return x0, y0, False
    n = max(int(np.ceil(length / step)), 1)
    ok_x, ok_y = x0, y0
    for k in range(1, n + 1):
        t = min(k * step, length) / length
        x = x0 + t * (x1 - x0)
        y = y0 + t * (y1 - y0)
        i, j = cell_of(x, y, h)
        if i < 0 or j < 0 or i >= navigable.shape[0] or j >= navigable.shape[1]:
            return ok_x, ok_y, True
        if not navigable[i, j]:
            return ok_x, ok_y, True
        ok_x, ok_y = x, y
    return ok_x, ok_y, False


def rle_encode(grid: np.ndarray) -> str:
    """Run-length encode a boolean grid, row-major.

    The encoding is a comma-separated list of run lengths; runs alternate
    values starting with False, so a grid beginning with True starts "0,".
    """
    flat = np.asarray(grid, dtype=bool).ravel()
    if flat.size == 0:
        return ""
    changes = np.flatnonzero(np.diff(flat))
    edges = np.concatenate(([0], changes + 1, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs = [0] + runs
    return ",".join(str(int(r)) for r in runs)


def rle_decode(text: str, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`rle_encode`."""
    total = shape[0] * shape[1]
    if text == "":
        if total != 0:
            raise ValueError("empty RLE for non-empty grid")
        return np.zeros(shape, dtype=bool)
    runs = [int(r) for r in text.split(",")]
    if sum(runs) != total:
        raise ValueError(f"RLE length {sum(runs)} != grid size {total}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value:
            flat[pos:pos + r] = True
        pos += r
        value = not value
    return flat.reshape(shape)


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = float((a + np.pi) % (2.0 * np.pi) - np.pi)
    return np.pi if a == -np.pi else a
