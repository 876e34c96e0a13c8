"""Raster grid, cell masks and the field containers shared by every stage.

Coordinates are in nominal kilometres. Row 0 is the lowest-y row, so cell
``(r, c)`` has its centre at ``origin + ((c + 0.5) * dx, (r + 0.5) * dy)``.
Non-scored cells (land, outside) hold ``NaN`` in every field.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

OUTSIDE = 0
LAND = 1
OCEAN = 2
# label values >= REGION_OFFSET + 1 encode "ocean in region (value - REGION_OFFSET)"
REGION_OFFSET = 2


class GridError(ValueError):
    """Structural mismatch between grids or malformed field data."""


@dataclass(frozen=True)
class GridSpec:
    nrows: int
    ncols: int
    cell_size_x: float = 25.0
    cell_size_y: float = 25.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nrows) < 1 or int(self.ncols) < 1:
            raise GridError("grid needs at least one row and one column")
        if not (self.cell_size_x > 0 and self.cell_size_y > 0):
            raise GridError("cell sizes must be positive")
        object.__setattr__(self, "nrows", int(self.nrows))
        object.__setattr__(self, "ncols", int(self.ncols))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def min_cell_size(self) -> float:
        return min(self.cell_size_x, self.cell_size_y)

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.ncols * self.cell_size_x, self.nrows * self.cell_size_y))

    def cell_centers(self):
        """Return ``(X, Y)`` arrays of cell-centre coordinates."""
        x = self.origin[0] + (np.arange(self.ncols) + 0.5) * self.cell_size_x
        y = self.origin[1] + (np.arange(self.nrows) + 0.5) * self.cell_size_y
        return np.meshgrid(x, y)

    def locate(self, x, y):
        """Map coordinates to ``(row, col)`` index arrays; -1 when off-grid."""
        col = np.floor((np.asarray(x, dtype=float) - self.origin[0]) / self.cell_size_x).astype(int)
        row = np.floor((np.asarray(y, dtype=float) - self.origin[1]) / self.cell_size_y).astype(int)
        off = (col < 0) | (col >= self.ncols) | (row < 0) | (row >= self.nrows)
        col = np.where(off, -1, col)
        row = np.where(off, -1, row)
        return row, col

    def to_dict(self):
        return {
            "nrows": self.nrows,
            "ncols": self.ncols,
            "dx_km": self.cell_size_x,
            "dy_km": self.cell_size_y,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["nrows"], d["ncols"], d.get("dx_km", 25.0), d.get("dy_km", 25.0),
                   tuple(d.get("origin", (0.0, 0.0))))


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CellMask:
    """Per-cell labels, region ids and physical cell areas.

    ``labels`` holds OUTSIDE / LAND / OCEAN codes, ``regions`` the region id
    of each ocean cell (0 when unassigned).
    """

    grid: GridSpec
    labels: np.ndarray
    regions: np.ndarray = None
    cell_area: np.ndarray = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.grid.shape:
            raise GridError(f"mask shape {labels.shape} does not match grid {self.grid.shape}")
        if not np.isin(labels, (OUTSIDE, LAND, OCEAN)).all():
            raise GridError("mask labels must be OUTSIDE, LAND or OCEAN")
        regions = np.zeros(self.grid.shape, dtype=int) if self.regions is None else np.asarray(self.regions)
        if regions.shape != self.grid.shape:
            raise GridError("region raster does not match grid")
        if np.any((regions != 0) & (labels != OCEAN)):
            raise GridError("region ids are only allowed on ocean cells")
        if self.cell_area is None:
            area = np.full(self.grid.shape, self.grid.cell_size_x * self.grid.cell_size_y)
        else:
            area = np.asarray(self.cell_area, dtype=float)
            if area.shape != self.grid.shape or np.any(area < 0):
                raise GridError("cell_area must be a nonnegative raster on the grid")
        object.__setattr__(self, "labels", _frozen(labels, np.uint8))
        object.__setattr__(self, "regions", _frozen(regions, int))
        object.__setattr__(self, "cell_area", _frozen(area, float))

    @property
    def ocean(self):
        return self.labels == OCEAN

    @property
    def region_ids(self):
        return sorted(int(r) for r in np.unique(self.regions) if r != 0)

    def region_cells(self, region):
        return self.ocean & (self.regions == region)

    def encode(self):
        """Single uint8 raster: 0 outside, 1 land, 2 ocean, 2 + r ocean in region r."""
        out = self.labels.astype(np.uint8).copy()
        inreg = self.regions > 0
        if np.any(self.regions > 255 - REGION_OFFSET):
            raise GridError("region ids above 253 cannot be encoded")
        out[inreg] = (self.regions[inreg] + REGION_OFFSET).astype(np.uint8)
        return out

    @classmethod
    def decode(cls, grid, codes, cell_area=None):
        codes = np.asarray(codes).astype(int)
        labels = np.where(codes > REGION_OFFSET, OCEAN, codes)
        regions = np.where(codes > REGION_OFFSET, codes - REGION_OFFSET, 0)
        return cls(grid, labels, regions, cell_area)


@dataclass(frozen=True)
class Field:
    grid: GridSpec
    values: np.ndarray
    year: Optional[int] = None
    month: Optional[int] = None
    lead: Optional[float] = None

    kind = "field"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        self._check(values)
        object.__setattr__(self, "values", _frozen(values))

    def _check(self, values):
        v = values[~np.isnan(values)]
        if np.any((v < 0) | (v > 1)):
            raise GridError(f"{self.kind} values must lie in [0, 1]")

    @property
    def valid(self):
        return ~np.isnan(self.values)

    def with_values(self, values):
        return type(self)(self.grid, values, self.year, self.month, self.lead)

    def stamp(self):
        return {"year": self.year, "month": self.month, "lead": self.lead}


class ConcentrationField(Field):
    kind = "concentration"


class ProbabilityField(Field):
    kind = "probability"


class RasterField(Field):
    """Unbounded float values, e.g. fitted trend coefficients."""

    kind = "raster"

    def _check(self, values):
        pass


class BinaryField(Field):
    kind = "binary"

    def _check(self, values):
        v = values[~np.isnan(values)]
        if not np.isin(v, (0.0, 1.0)).all():
            raise GridError("binary field values must be 0 or 1")


def masked_values(mask: CellMask, values):
    """Copy ``values`` with non-ocean cells set to NaN."""
    out = np.array(values, dtype=float, copy=True)
    out[~mask.ocean] = np.nan
    return out


def check_same_grid(*fields):
    grids = {f.grid for f in fields}
    if len(grids) > 1:
        raise GridError("fields are defined on different grids")
    masks = [f.valid for f in fields]
    for m in masks[1:]:
        if not np.array_equal(m, masks[0]):
            raise GridError("fields disagree on which cells are scored")


def threshold_concentration(c: ConcentrationField, tau: float = 0.15) -> BinaryField:
    """Ice present where concentration is at least ``tau``."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if not isinstance(c, Field):
        raise GridError("expected a concentration field")
    v = c.values
    out = np.where(np.isnan(v), np.nan, (v >= tau).astype(float))
    return BinaryField(c.grid, out, c.year, c.month, c.lead)


def area_weights(mask: CellMask, scope: Optional[int] = None) -> np.ndarray:
    """Per-cell weights proportional to physical area, summing to one.

    ``scope`` is a region id, or ``None`` for every ocean cell. Cells out of
    scope get weight 0.
    """
    cells = mask.ocean if scope is None else mask.region_cells(scope)
    if not cells.any():
        raise ValueError(f"no ocean cells in scope {scope!r}")
    w = np.where(cells, mask.cell_area, 0.0)
    total = w.sum()
    if total <= 0:
        raise ValueError(f"scope {scope!r} has zero total area")
    return w / total


def ensemble_probability(members: Sequence[BinaryField]) -> ProbabilityField:
    """Fraction of members predicting ice in each cell."""
    members = list(members)
    if not members:
        raise ValueError("ensemble_probability needs at least one member")
    check_same_grid(*members)
    stack = np.stack([m.values for m in members])
    m0 = members[0]
    return ProbabilityField(m0.grid, stack.mean(axis=0), m0.year, m0.month, m0.lead)
