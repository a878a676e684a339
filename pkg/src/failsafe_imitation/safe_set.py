"""Grid inner approximation of the safe action set, and the fallback memory."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import LipschitzBudget, fallback_gamma, lipschitz_gamma, zoh_beta
from .fallback import (
    FallbackManeuver,
    SafetyOptions,
    SafetyVerdict,
    remaining_steps,
    total_safety_cost,
    total_safety_cost_batch,
)
from .geometry import Box2, GridPartition, Scenario

LIPSCHITZ = "L"
EXTREMAL = "E"


class HorizonExhaustedError(RuntimeError):
    pass


def lipschitz_certifies(w_center: float, gamma: float, radius: float) -> bool:
    """``w`` stays non-positive on the max-norm ball of ``radius`` around the centre."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return w_center <= -gamma * radius


def corners_certify(w_corners) -> bool:
    return bool(np.all(np.asarray(w_corners) <= 0.0))


def certify_cell_lipschitz(scenario: Scenario, t: int, cell: Box2, gamma: float,
                           options: SafetyOptions = SafetyOptions()):
    """Returns ``(safe, w_center)``. Never claims a cell unsafe, only safe or unknown."""
    w = total_safety_cost(scenario, t, cell.center, options).w
    return lipschitz_certifies(w, gamma, cell.half_side_inf), w


def certify_cell_corners(scenario: Scenario, t: int, cell: Box2,
                         options: SafetyOptions = SafetyOptions()):
    """Returns ``(safe, corner_ws)``; exact only if ``w`` is convex on the cell."""
    ws = tuple(total_safety_cost(scenario, t, c, options).w for c in cell.corners())
    return corners_certify(ws), ws


def default_gamma(scenario: Scenario, t: int, rule: str = "zoh", alpha: float = 2.0,
                  beta: Optional[float] = None) -> float:
    """Lipschitz constant of ``a -> w_t(s, a)`` used by the L certifier.

    ``zoh``: ``alpha * max(1, beta**H)`` with ``beta`` defaulting to the
    max-norm of the one-step ZOH matrices. ``fallback``: the sensitivity bound
    of the fallbacks actually used (much tighter, equally rigorous).
    """
    steps = remaining_steps(scenario, t)
    if rule == "zoh":
        b = zoh_beta(scenario.dt) if beta is None else beta
        return lipschitz_gamma(LipschitzBudget(alpha, b, steps))
    if rule == "fallback":
        return fallback_gamma(scenario.dt, steps, alpha)
    raise ValueError(f"unknown gamma rule {rule!r}")


@dataclass(frozen=True)
class SafeSet:
    grid: GridPartition
    safe_cells: tuple  # sorted cell indices
    per_cell_w: dict = field(compare=False)
    mode: str = LIPSCHITZ
    gamma: Optional[float] = None
    # every evaluated action and its w, for seeding a fallback when no cell certifies
    points: np.ndarray = field(default=None, compare=False, repr=False)
    point_w: np.ndarray = field(default=None, compare=False, repr=False)

    def __len__(self):
        return len(self.safe_cells)

    @property
    def empty(self) -> bool:
        return not self.safe_cells

    def is_safe(self, k: int) -> bool:
        return k in self._safe_lookup

    @property
    def _safe_lookup(self) -> frozenset:
        return frozenset(self.safe_cells)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.n_cells, dtype=bool)
        m[list(self.safe_cells)] = True
        return m

    def best_point(self):
        """Evaluated action with the smallest ``w`` (used to seed the fallback memory)."""
        i = int(np.argmin(self.point_w))
        return self.points[i], float(self.point_w[i])

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "gamma": self.gamma,
            "grid": {
                "nx": self.grid.nx,
                "ny": self.grid.ny,
                "bounds": {"x": [self.grid.bounds.x.lo, self.grid.bounds.x.hi],
                           "y": [self.grid.bounds.y.lo, self.grid.bounds.y.hi]},
            },
            "safeCells": list(self.safe_cells),
            "nSafe": len(self.safe_cells),
            "perCellW": {str(k): list(v) for k, v in sorted(self.per_cell_w.items())},
        }


def infer_safe_set(scenario: Scenario, t: int, grid: GridPartition, mode: str = LIPSCHITZ,
                   gamma: Optional[float] = None, options: SafetyOptions = SafetyOptions()) -> SafeSet:
    """Certify every cell of ``grid`` with the chosen rule; cells are visited row-major."""
    if mode == LIPSCHITZ:
        if gamma is None:
            raise ValueError("L mode needs gamma")
        pts = grid.centers()
        w, _, _ = total_safety_cost_batch(scenario, t, pts, options)
        radius = np.array([grid.cell(k).half_side_inf for k in range(grid.n_cells)])
        safe = [k for k in range(grid.n_cells) if lipschitz_certifies(w[k], gamma, radius[k])]
        per_cell = {k: (float(w[k]),) for k in range(grid.n_cells)}
    elif mode == EXTREMAL:
        pts = grid.vertices()
        w, _, _ = total_safety_cost_batch(scenario, t, pts, options)
        per_cell = {}
        safe = []
        for k in range(grid.n_cells):
            ws = tuple(float(w[v]) for v in grid.cell_corner_vertex_ids(k))
            per_cell[k] = ws
            if corners_certify(ws):
                safe.append(k)
        gamma = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SafeSet(grid, tuple(safe), per_cell, mode, gamma, pts, w)


@dataclass(frozen=True)
class FallbackMemory:
    maneuver: FallbackManeuver
    stage_offset: int = 0

    @property
    def remaining(self) -> int:
        return len(self.maneuver.accel_seq) - self.stage_offset

    def next_action(self) -> np.ndarray:
        if self.remaining <= 0:
            raise HorizonExhaustedError("fallback maneuver has no steps left")
        return self.maneuver.accel_seq[self.stage_offset]

    def advance(self) -> "FallbackMemory":
        if self.remaining <= 0:
            raise HorizonExhaustedError("fallback maneuver has no steps left")
        return FallbackMemory(self.maneuver, self.stage_offset + 1)


def update_fallback(memory: Optional[FallbackMemory], safe_set: SafeSet,
                    chosen: Optional[SafetyVerdict]) -> Optional[FallbackMemory]:
    """New memory after a stage.

    With a certified cell and its chosen action's verdict, the memory becomes
    that verdict's best fallback. Without one the old memory is kept; the
    caller executes ``memory.next_action()`` and stores ``memory.advance()``.
    """
    if not safe_set.empty and chosen is not None:
        if not chosen.safe:
            raise ValueError(f"chosen action is not certified (w={chosen.w})")
        return FallbackMemory(chosen.best_fallback, 0)
    return memory


def seed_memory(action, verdict: SafetyVerdict) -> FallbackMemory:
    """Memory that first plays ``action`` and then its certified fallback."""
    fb = verdict.best_fallback
    seq = np.vstack([np.asarray(action, dtype=float).reshape(1, 2), fb.accel_seq])
    return FallbackMemory(FallbackManeuver(fb.kind, seq, fb.trajectory), 0)
