"""Planar geometry for monitors and gridded sources.

All coordinates are kilometres in a common projected plane. Grids are
axis-aligned with square cells; cell (0, 0) sits at the grid origin
(lower-left corner), rows advance along +y and columns along +x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomainError

CTM = "ctm"
SAT = "sat"
SOURCES = (CTM, SAT)


@dataclass(frozen=True)
class Location:
    """A point in the projected plane, km units."""

    site_id: str
    x_km: float
    y_km: float

    def __post_init__(self):
        if not (np.isfinite(self.x_km) and np.isfinite(self.y_km)):
            raise ValueError(f"non-finite coordinates for site {self.site_id!r}")


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned square-cell grid.

    origin_x, origin_y : lower-left corner of cell (0, 0), km
    cell_km            : cell edge length, km, > 0
    n_rows, n_cols     : grid dimensions, >= 1
    source_tag         : one of {"ctm", "sat"} (or "target" for output grids)
    """

    origin_x: float
    origin_y: float
    cell_km: float
    n_rows: int
    n_cols: int
    source_tag: str = "target"

    def __post_init__(self):
        if self.cell_km <= 0:
            raise ValueError("cell_km must be > 0")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid must have at least one row and column")

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the covered rectangle."""
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.n_cols * self.cell_km,
            self.origin_y + self.n_rows * self.cell_km,
        )

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        return xmin <= x <= xmax and ymin <= y <= ymax

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Map a point to its (row, col); boundary points go to the higher cell,
        clipped so the far edge still belongs to the last cell."""
        if not self.contains(x, y):
            raise OutOfDomainError(
                f"point ({x}, {y}) outside grid extent {self.extent}"
            )
        col = min(int((x - self.origin_x) / self.cell_km), self.n_cols - 1)
        row = min(int((y - self.origin_y) / self.cell_km), self.n_rows - 1)
        return row, col

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise OutOfDomainError(f"cell ({row}, {col}) outside grid")
        return (
            self.origin_x + (col + 0.5) * self.cell_km,
            self.origin_y + (row + 0.5) * self.cell_km,
        )

    def all_centers(self) -> np.ndarray:
        """(n_rows*n_cols, 2) array of centres, row-major order."""
        rows, cols = np.meshgrid(
            np.arange(self.n_rows), np.arange(self.n_cols), indexing="ij"
        )
        x = self.origin_x + (cols.ravel() + 0.5) * self.cell_km
        y = self.origin_y + (rows.ravel() + 0.5) * self.cell_km
        return np.column_stack([x, y])


def link_points(points: list[Location] | np.ndarray, grid: GridSpec) -> np.ndarray:
    """Link points to grid cells.

    Parameters
    ----------
    points : list of Location or (n, 2) array of xy km
    grid   : GridSpec

    Returns
    -------
    (n, 2) int array of (row, col), one per point.

    Raises OutOfDomainError if any point falls outside the grid.
    """
    xy = coords_array(points)
    out = np.empty((xy.shape[0], 2), dtype=np.int64)
    for i, (x, y) in enumerate(xy):
        out[i] = grid.cell_of(float(x), float(y))
    return out


def coords_array(points) -> np.ndarray:
    """Normalize a list of Location or an (n, 2) array to float (n, 2)."""
    if isinstance(points, np.ndarray):
        xy = np.asarray(points, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError("coordinate array must have shape (n, 2)")
        return xy
    return np.array([[p.x_km, p.y_km] for p in points], dtype=float)


def distance_matrix(a, b=None) -> np.ndarray:
    """Pairwise Euclidean distances in km.

    distance_matrix(a) is the symmetric (n, n) matrix with zero diagonal;
    distance_matrix(a, b) is the (n, m) cross matrix.
    """
    xa = coords_array(a)
    xb = xa if b is None else coords_array(b)
    diff = xa[:, None, :] - xb[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    if b is None:
        # exact zeros on the diagonal, exact symmetry
        np.fill_diagonal(d, 0.0)
        d = 0.5 * (d + d.T)
    return d
