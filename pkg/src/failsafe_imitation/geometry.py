"""Intervals, axis-aligned boxes, action grids and agent/scenario records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class OutOfDomainError(ValueError):
    """A point lies outside the box it is supposed to be evaluated on."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def inflate(self, r: float) -> "Interval":
        return Interval(self.lo - r, self.hi + r)

    def clip(self, lo: float, hi: float) -> "Interval":
        new_lo = min(max(self.lo, lo), hi)
        new_hi = max(min(self.hi, hi), lo)
        return Interval(new_lo, new_hi)


@dataclass(frozen=True)
class Box2:
    x: Interval
    y: Interval

    @classmethod
    def from_bounds(cls, xlo, xhi, ylo, yhi) -> "Box2":
        return cls(Interval(float(xlo), float(xhi)), Interval(float(ylo), float(yhi)))

    @classmethod
    def centered(cls, cx, cy, half_x, half_y) -> "Box2":
        return cls.from_bounds(cx - half_x, cx + half_x, cy - half_y, cy + half_y)

    @property
    def area(self) -> float:
        return self.x.width * self.y.width

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x.mid, self.y.mid])

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.x.lo, self.y.lo])

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.x.hi, self.y.hi])

    @property
    def half_side_inf(self) -> float:
        """Radius of the box under the max-norm (half the larger side)."""
        return 0.5 * max(self.x.width, self.y.width)

    def corners(self) -> np.ndarray:
        return np.array(
            [
                [self.x.lo, self.y.lo],
                [self.x.hi, self.y.lo],
                [self.x.lo, self.y.hi],
                [self.x.hi, self.y.hi],
            ]
        )

    def contains(self, p) -> bool:
        return self.x.contains(p[0]) and self.y.contains(p[1])

    def as_array(self) -> np.ndarray:
        return np.array([self.x.lo, self.x.hi, self.y.lo, self.y.hi])


def box_gap_linf(a: Box2, b: Box2) -> float:
    """Signed l-inf gap between two boxes.

    Positive values are the l-inf set distance of disjoint boxes; negative
    values give the overlap depth along the axis that overlaps least.
    """
    gx = max(b.x.lo - a.x.hi, a.x.lo - b.x.hi)
    gy = max(b.y.lo - a.y.hi, a.y.lo - b.y.hi)
    return max(gx, gy)


@dataclass(frozen=True)
class GridPartition:
    """Regular nx-by-ny grid over a box; cells indexed row-major, ``j * nx + i``."""

    bounds: Box2
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(self.bounds.x.lo, self.bounds.x.hi, self.nx + 1)

    @property
    def y_edges(self) -> np.ndarray:
        return np.linspace(self.bounds.y.lo, self.bounds.y.hi, self.ny + 1)

    def index(self, i: int, j: int) -> int:
        return j * self.nx + i

    def ij(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n_cells:
            raise IndexError(k)
        return k % self.nx, k // self.nx

    def cell(self, k: int) -> Box2:
        i, j = self.ij(k)
        xe, ye = self.x_edges, self.y_edges
        return Box2.from_bounds(xe[i], xe[i + 1], ye[j], ye[j + 1])

    def cells(self) -> list[Box2]:
        return [self.cell(k) for k in range(self.n_cells)]

    def centers(self) -> np.ndarray:
        xe, ye = self.x_edges, self.y_edges
        cx = 0.5 * (xe[:-1] + xe[1:])
        cy = 0.5 * (ye[:-1] + ye[1:])
        gx, gy = np.meshgrid(cx, cy)  # rows follow y, so ravel is row-major
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def vertices(self) -> np.ndarray:
        """All (nx+1)*(ny+1) grid vertices, vertex (i, j) at row ``j * (nx+1) + i``."""
        gx, gy = np.meshgrid(self.x_edges, self.y_edges)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def cell_corner_vertex_ids(self, k: int) -> list[int]:
        i, j = self.ij(k)
        w = self.nx + 1
        return [j * w + i, j * w + i + 1, (j + 1) * w + i, (j + 1) * w + i + 1]

    def cell_of(self, a) -> int:
        return cell_of(self, a)

    def cells_of(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        b = self.bounds
        inside = (
            (pts[:, 0] >= b.x.lo)
            & (pts[:, 0] <= b.x.hi)
            & (pts[:, 1] >= b.y.lo)
            & (pts[:, 1] <= b.y.hi)
        )
        if not np.all(inside):
            raise OutOfDomainError(f"points outside grid bounds: {pts[~inside][:3]}")
        i = np.searchsorted(self.x_edges, pts[:, 0], side="right") - 1
        j = np.searchsorted(self.y_edges, pts[:, 1], side="right") - 1
        i = np.minimum(i, self.nx - 1)
        j = np.minimum(j, self.ny - 1)
        return j * self.nx + i

    def on_boundary(self, a, tol: float = 0.0) -> bool:
        """True if ``a`` lies on an interior grid line (where cell maps jump)."""
        x, y = float(a[0]), float(a[1])
        return bool(
            np.any(np.abs(self.x_edges[1:-1] - x) <= tol)
            or np.any(np.abs(self.y_edges[1:-1] - y) <= tol)
        )

    def refine(self, factor: int = 2) -> "GridPartition":
        return GridPartition(self.bounds, self.nx * factor, self.ny * factor)


def cell_of(grid: GridPartition, a) -> int:
    """Index of the half-open cell containing ``a``.

    Points on the global upper boundary belong to the last row/column, so the
    lookup is total on the closed box.
    """
    return int(grid.cells_of(np.asarray(a, dtype=float).reshape(1, 2))[0])


@dataclass(frozen=True)
class Road:
    """Straight road with lateral extent ``[y_min, y_max]``; infinite bounds allowed."""

    y_min: float = -math.inf
    y_max: float = math.inf
    lane_width: float = 3.75

    def __post_init__(self):
        if not self.y_min < self.y_max:
            raise ValueError("road needs y_min < y_max")


@dataclass(frozen=True)
class MotionBounds:
    a_max_long: float
    a_max_lat: float
    v_max_long: float
    v_min_long: float
    v_max_lat: float

    def __post_init__(self):
        if self.a_max_long < 0 or self.a_max_lat < 0:
            raise ValueError("acceleration bounds must be non-negative")
        if self.v_min_long > self.v_max_long:
            raise ValueError("v_min_long > v_max_long")


@dataclass(frozen=True)
class EgoLimits:
    """Acceleration magnitudes available to the ego's fallback maneuvers."""

    a_max_long: float = 8.0
    a_max_lat: float = 2.0


@dataclass(frozen=True)
class EgoState:
    px: float
    py: float
    vx: float
    vy: float
    half_len: float = 2.5
    half_wid: float = 1.0

    def __post_init__(self):
        if self.half_len <= 0 or self.half_wid <= 0:
            raise ValueError("ego extents must be positive")

    def box(self) -> Box2:
        return Box2.centered(self.px, self.py, self.half_len, self.half_wid)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])


@dataclass(frozen=True)
class AgentState:
    px: float
    py: float
    vx: float
    vy: float
    bounds: MotionBounds
    half_len: float = 2.5
    half_wid: float = 1.0
    id: int = 0

    def box(self) -> Box2:
        return Box2.centered(self.px, self.py, self.half_len, self.half_wid)


def default_action_box() -> Box2:
    return Box2.from_bounds(-8.0, 4.0, -2.0, 2.0)


@dataclass(frozen=True)
class Scenario:
    """Snapshot of the driving problem at some stage, plus optional recordings.

    ``ego``/``others`` are the states at the stage the snapshot describes.
    ``ego_track`` (T, 4) and ``other_tracks`` (id -> (T, 4)) hold recorded
    ``px, py, vx, vy`` per stage and are only used for open-loop replay.
    ``direction`` is +1 when traffic drives towards increasing x.
    """

    road: Road
    ego: EgoState
    others: tuple = ()
    dt: float = 0.2
    horizon: int = 20
    action_box: Box2 = field(default_factory=default_action_box)
    ego_limits: EgoLimits = field(default_factory=EgoLimits)
    direction: int = 1
    ego_track: Optional[np.ndarray] = field(default=None, compare=False)
    other_tracks: Optional[dict] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one stage")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        object.__setattr__(self, "others", tuple(self.others))


def boxes_array(boxes: Sequence[Box2]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.stack([b.as_array() for b in boxes])
