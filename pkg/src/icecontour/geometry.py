"""Line-based contour parameterization on a gridded region.

A region carries ``n`` lines, each starting at an anchor point ``B_i`` and
running at angle ``theta_i`` until it leaves the region. Along a line the
mask alternates between ocean runs (``R``) and land runs (``H``); the ice
edge on that line is summarised by the ice-covered fraction of its ocean
length. Lines are traced by fixed-step sampling, so every segment length is
an integer multiple of the sampling step.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import LAND, BinaryField, CellMask, GridSpec
from .repair import Contour, repair_self_intersections

COASTAL = "coastal"
RADIAL = "radial"


class GeometryError(ValueError):
    """A region or line cannot be constructed."""


@dataclass(frozen=True)
class RegionGeometry:
    region: int
    kind: str
    grid: GridSpec
    anchors: np.ndarray            # (n, 2) start point of each line, after trimming leading land
    angles: np.ndarray             # (n,) radians
    step: float
    ocean_spans: tuple             # per line: (K, 2) array of [start, end] distances
    land_spans: tuple              # per line: (K-1, 2) array
    sample_cells: tuple            # per line: (rows, cols) of the ocean samples

    @property
    def n_lines(self) -> int:
        return len(self.angles)

    @property
    def directions(self):
        return np.column_stack([np.cos(self.angles), np.sin(self.angles)])

    @property
    def ocean_length(self):
        return np.array([np.sum(s[:, 1] - s[:, 0]) for s in self.ocean_spans])

    @property
    def land_length(self):
        return np.array([np.sum(s[:, 1] - s[:, 0]) if len(s) else 0.0 for s in self.land_spans])

    @property
    def line_length(self):
        return np.array([s[-1, 1] for s in self.ocean_spans])

    @property
    def diameter(self) -> float:
        ends = self.anchors + self.line_length[:, None] * self.directions
        pts = np.vstack([self.anchors, ends])
        return float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))

    def segments(self, i):
        """Lengths of the ocean and land runs of line ``i``."""
        r = self.ocean_spans[i]
        h = self.land_spans[i]
        return r[:, 1] - r[:, 0], (h[:, 1] - h[:, 0]) if len(h) else np.zeros(0)


@dataclass(frozen=True)
class LineState:
    proportion: float
    transformed: float
    fixed: bool
    length: float


@dataclass(frozen=True)
class RegionConfig:
    """One entry of the region configuration file."""

    region: int
    kind: str
    n_lines: int
    angle: Optional[float] = None          # radians, coastal only
    coast: Optional[tuple] = None          # ((x0, y0), (x1, y1)), coastal only
    anchors: Optional[tuple] = None        # explicit anchor points, coastal only
    center: Optional[tuple] = None         # radial only
    snap_dist: float = 12.5
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    fixable_lines: tuple = ()
    name: str = ""

    def build(self, mask: CellMask, n_lines=None, step_fraction=0.25) -> RegionGeometry:
        return build_region_geometry(mask, self.region, n_lines or self.n_lines, self.kind,
                                     angle=self.angle, center=self.center, coast=self.coast,
                                     anchors=self.anchors, step_fraction=step_fraction)

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", COASTAL)
        if kind not in (COASTAL, RADIAL):
            raise GeometryError(f"region {d.get('id')}: unknown kind {kind!r}")
        angle = d.get("angle")
        if angle is None and "angle_deg" in d:
            angle = np.deg2rad(d["angle_deg"])
        tup = lambda v: None if v is None else tuple(tuple(map(float, p)) for p in v)
        return cls(
            region=int(d["id"]),
            kind=kind,
            n_lines=int(d["n_lines"]),
            angle=None if angle is None else float(angle),
            coast=tup(d.get("coast")),
            anchors=tup(d.get("anchors")),
            center=None if d.get("center") is None else tuple(map(float, d["center"])),
            snap_dist=float(d.get("snap_km", 12.5)),
            delta1=d.get("delta1"),
            delta2=d.get("delta2"),
            fixable_lines=tuple(int(i) for i in d.get("fixable_lines", ())),
            name=d.get("name", ""),
        )

    def to_dict(self):
        d = {"id": self.region, "kind": self.kind, "n_lines": self.n_lines,
             "snap_km": self.snap_dist, "name": self.name,
             "fixable_lines": list(self.fixable_lines)}
        if self.angle is not None:
            d["angle"] = self.angle
        for key in ("coast", "anchors"):
            v = getattr(self, key)
            if v is not None:
                d[key] = [list(p) for p in v]
        if self.center is not None:
            d["center"] = list(self.center)
        if self.delta1 is not None:
            d["delta1"] = self.delta1
        if self.delta2 is not None:
            d["delta2"] = self.delta2
        return d


def load_region_config(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"region config not found: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [RegionConfig.from_dict(d) for d in doc["regions"]]


def build_region_geometry(mask: CellMask, region: int, n_lines: int, kind: str = COASTAL, *,
                          angle=None, center=None, coast=None, anchors=None,
                          step_fraction: float = 0.25) -> RegionGeometry:
    """Lay out ``n_lines`` lines over ``region`` and trace them through the mask.

    Coastal regions need ``angle`` and either ``coast`` (two end points along
    which anchors are spaced evenly) or explicit ``anchors``. Radial regions
    need ``center``; their angles are spread evenly over ``[0, 2*pi)``.
    """
    grid = mask.grid
    in_region = mask.region_cells(region)
    if not in_region.any():
        raise GeometryError(f"region {region} has no ocean cells")
    if n_lines < 2:
        raise GeometryError("need at least two lines")
    if not 0 < step_fraction <= 0.25:
        raise GeometryError("sampling step must be at most a quarter cell")
    step = grid.min_cell_size * step_fraction

    if kind == RADIAL:
        if center is None:
            raise GeometryError(f"radial region {region} needs a center")
        start = np.tile(np.asarray(center, dtype=float), (n_lines, 1))
        r, c = grid.locate(*start[0])
        if r < 0 or not in_region[r, c]:
            raise GeometryError(f"center of radial region {region} is not inside the region")
        theta = 2 * np.pi * np.arange(n_lines) / n_lines
    elif kind == COASTAL:
        if angle is None:
            raise GeometryError(f"coastal region {region} needs a line angle")
        if anchors is not None:
            start = np.asarray(anchors, dtype=float)
            if len(start) != n_lines:
                raise GeometryError(f"region {region}: {len(start)} anchors for {n_lines} lines")
        elif coast is not None:
            a, b = (np.asarray(p, dtype=float) for p in coast)
            frac = (np.arange(n_lines) + 0.5) / n_lines
            start = a + frac[:, None] * (b - a)
        else:
            raise GeometryError(f"coastal region {region} needs coast end points or anchors")
        theta = np.full(n_lines, float(angle))
    else:
        raise GeometryError(f"unknown geometry kind {kind!r}")

    max_steps = int(np.ceil(grid.diameter / step)) + 2
    t = (np.arange(max_steps) + 0.5) * step
    land = mask.labels == LAND
    out_anchor, o_spans, h_spans, cells = [], [], [], []
    for i in range(n_lines):
        u = np.array([np.cos(theta[i]), np.sin(theta[i])])
        xs = start[i, 0] + t * u[0]
        ys = start[i, 1] + t * u[1]
        rows, cols = grid.locate(xs, ys)
        on = rows >= 0
        code = np.zeros(max_steps, dtype=int)         # 0 stop, 1 ocean, 2 land
        rr, cc = rows[on], cols[on]
        code[on] = np.where(in_region[rr, cc], 1, np.where(land[rr, cc], 2, 0))
        stop = np.flatnonzero(code == 0)
        end = stop[0] if len(stop) else max_steps
        code = code[:end]
        ocean_idx = np.flatnonzero(code == 1)
        if len(ocean_idx) == 0:
            raise GeometryError(f"region {region}: line {i} has zero ocean length")
        k0, k1 = ocean_idx[0], ocean_idx[-1] + 1
        code = code[k0:k1]
        out_anchor.append(start[i] + k0 * step * u)
        # run-length encode ocean/land
        change = np.flatnonzero(np.diff(code)) + 1
        bounds = np.concatenate([[0], change, [len(code)]])
        runs = np.column_stack([bounds[:-1], bounds[1:]]) * step
        kinds = code[bounds[:-1]]
        o_spans.append(runs[kinds == 1])
        h_spans.append(runs[kinds == 2].reshape(-1, 2))
        sel = np.flatnonzero(code == 1) + k0
        cells.append((rows[sel], cols[sel]))
    return RegionGeometry(region, kind, grid, np.array(out_anchor), theta, step,
                          tuple(o_spans), tuple(h_spans), tuple(cells))


def proportion_from_field(geom: RegionGeometry, field: BinaryField) -> np.ndarray:
    """Ice-covered fraction of each line's ocean length."""
    if field.grid != geom.grid:
        raise GeometryError("field and geometry use different grids")
    v = np.nan_to_num(field.values, nan=0.0)
    return np.array([v[r, c].mean() for r, c in geom.sample_cells])


def length_from_proportion(geom: RegionGeometry, i: int, pi: float) -> float:
    """Distance from ``B_i`` to the ice edge when a fraction ``pi`` of the ocean is covered.

    The edge sits in the first ocean run whose cumulative share reaches
    ``pi``; every land run before that run is crossed in full.
    """
    if not 0.0 <= pi <= 1.0:
        raise ValueError(f"proportion {pi} outside [0, 1]")
    r, h = geom.segments(i)
    total = r.sum()
    cum = np.cumsum(r) / total
    d = int(np.searchsorted(cum, pi - 1e-12, side="left"))
    d = min(d, len(r) - 1)
    return float(pi * total + h[:d].sum())


def lengths_from_proportions(geom: RegionGeometry, pis) -> np.ndarray:
    pis = np.asarray(pis, dtype=float)
    return np.array([length_from_proportion(geom, i, p) for i, p in enumerate(pis)])


def proportion_from_length(geom: RegionGeometry, i: int, length: float) -> float:
    """Ocean fraction covered by the segment ``[0, length]`` of line ``i``."""
    spans = geom.ocean_spans[i]
    covered = np.clip(np.minimum(spans[:, 1], length) - spans[:, 0], 0.0, None).sum()
    return float(covered / (spans[:, 1] - spans[:, 0]).sum())


def proportions_from_lengths(geom: RegionGeometry, lengths) -> np.ndarray:
    return np.array([proportion_from_length(geom, i, y) for i, y in enumerate(lengths)])


def lengths_from_field(geom: RegionGeometry, field: BinaryField) -> np.ndarray:
    return lengths_from_proportions(geom, proportion_from_field(geom, field))


def line_states(geom: RegionGeometry, pis, eps=0.01, fixed=()) -> list:
    from .model import logit_clamped

    fixed = set(fixed)
    return [LineState(float(p), float(logit_clamped(p, eps)), i in fixed,
                      length_from_proportion(geom, i, float(p)))
            for i, p in enumerate(np.asarray(pis, dtype=float))]


def edge_points(geom: RegionGeometry, lengths) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=float)
    if np.any(lengths < -1e-9) or np.any(lengths > geom.line_length + 1e-9):
        raise GeometryError("lengths must lie within each line")
    return geom.anchors + lengths[:, None] * geom.directions


def contour_from_lengths(geom: RegionGeometry, lengths, repair=True, eta0=None,
                         growth=2.0) -> Contour:
    """Polygon through the edge points (and the anchors, for coastal regions).

    Self-intersections are removed with :func:`repair_self_intersections`
    unless ``repair`` is False. ``eta0`` defaults to a tenth of a cell.
    """
    pts = edge_points(geom, lengths)
    if geom.kind == COASTAL:
        poly = np.vstack([geom.anchors, pts[::-1]])
    else:
        poly = pts
    contour = Contour(poly).deduplicated()
    if repair and len(contour) >= 4:
        if eta0 is None:
            eta0 = 0.1 * geom.grid.min_cell_size
        contour = repair_self_intersections(contour, eta0, growth,
                                            max_eta=max(geom.diameter, eta0))
    return contour


def snap_to_boundary(geom: RegionGeometry, lengths, snap_dist: float = 12.5) -> np.ndarray:
    """Move edge points lying within ``snap_dist`` short of land or the region edge onto it."""
    if snap_dist < 0:
        raise ValueError("snap distance must be nonnegative")
    out = np.array(lengths, dtype=float, copy=True)
    if snap_dist == 0:
        return out
    for i, y in enumerate(out):
        spans = geom.ocean_spans[i]
        k = int(np.searchsorted(spans[:, 1], y - 1e-12, side="left"))
        k = min(k, len(spans) - 1)
        gap = spans[k, 1] - y
        if 0 < gap < snap_dist:
            out[i] = spans[k, 1]
    return out


def points_in_polygon(x, y, poly, tol=1e-9) -> np.ndarray:
    """Even-odd test; points on an edge (within ``tol``) count as inside."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = x.shape
    x = x.ravel()[:, None]
    y = y.ravel()[:, None]
    a = np.asarray(poly, dtype=float)
    b = np.roll(a, -1, axis=0)
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = ax + (y - ay) * (bx - ax) / (by - ay)
    inside = (straddle & (x < xcross)).sum(axis=1) % 2 == 1
    # on-edge test
    ex, ey = bx - ax, by - ay
    seg2 = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.clip(((x - ax) * ex + (y - ay) * ey) / seg2, 0.0, 1.0)
    s = np.where(seg2 > 0, s, 0.0)
    dx = ax + s * ex - x
    dy = ay + s * ey - y
    on_edge = (dx * dx + dy * dy <= tol * tol).any(axis=1)
    return (inside | on_edge).reshape(shape)


def rasterize(contour: Contour, grid: GridSpec, mask: CellMask, region=None) -> BinaryField:
    """Ocean cells whose centre lies inside the contour are 1, other ocean cells 0.

    With ``region`` set, only that region's cells can be 1.
    """
    scope = mask.ocean if region is None else mask.region_cells(region)
    out = np.where(mask.ocean, 0.0, np.nan)
    if len(contour) >= 3:
        X, Y = grid.cell_centers()
        rows, cols = np.nonzero(scope)
        tol = 1e-9 * grid.min_cell_size
        hit = points_in_polygon(X[rows, cols], Y[rows, cols], contour.points, tol=tol)
        out[rows[hit], cols[hit]] = 1.0
    return BinaryField(grid, out)


def discretization_error(observed: Sequence[BinaryField], candidates: dict, mask: CellMask,
                         region=None) -> dict:
    """Mean symmetric-difference area between observed ice and its line approximation.

    ``candidates`` maps a label (typically the line count N) to a
    RegionGeometry. Mismatch is a fraction of each field's ice area.
    """
    out = {}
    for label, geom in candidates.items():
        scope = mask.region_cells(geom.region)
        area = np.where(scope, mask.cell_area, 0.0)
        errs = []
        for f in observed:
            ice = np.nan_to_num(f.values) * scope
            total = float((ice * area).sum())
            if total <= 0:
                continue
            lengths = lengths_from_field(geom, f)
            approx = rasterize(contour_from_lengths(geom, lengths), geom.grid, mask, geom.region)
            diff = np.abs(np.nan_to_num(approx.values) * scope - ice)
            errs.append(float((diff * area).sum()) / total)
        out[label] = float(np.mean(errs)) if errs else 0.0
    return out
