"""Double-integrator ego dynamics and worst-case reachable rectangles of others."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import AgentState, Box2, EgoState, Interval, Road


def step_double_integrator(state: EgoState, accel, dt: float) -> EgoState:
    """Exact zero-order-hold step, independently per axis."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ax, ay = float(accel[0]), float(accel[1])
    return EgoState(
        px=state.px + state.vx * dt + 0.5 * ax * dt * dt,
        py=state.py + state.vy * dt + 0.5 * ay * dt * dt,
        vx=state.vx + ax * dt,
        vy=state.vy + ay * dt,
        half_len=state.half_len,
        half_wid=state.half_wid,
    )


def zoh_matrices(dt: float, k: int = 1):
    """State matrix and input matrix of ``k`` ZOH steps for one axis, state (p, v)."""
    phi = np.array([[1.0, k * dt], [0.0, 1.0]])
    # input column per step j (0-based): effect of a_j on (p_k, v_k)
    gam = np.array([[(k - j - 0.5) * dt * dt for j in range(k)], [dt] * k])
    return phi, gam


def zoh_beta(dt: float) -> float:
    """Max-norm Lipschitz constant of one ZOH step in state and in action."""
    phi, gam = zoh_matrices(dt)
    return float(max(np.abs(phi).sum(axis=1).max(), np.abs(gam).sum(axis=1).max()))


@dataclass(frozen=True)
class LipschitzBudget:
    alpha: float
    beta: float
    horizon: int

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("Lipschitz constants must be non-negative")


def lipschitz_gamma(budget: LipschitzBudget) -> float:
    return budget.alpha * max(1.0, budget.beta ** budget.horizon)


def fallback_gamma(dt: float, steps: int, alpha: float = 2.0) -> float:
    """Lipschitz constant of the total safety cost in the action for our fallbacks.

    All fallbacks move each axis either open-loop or by a 1-Lipschitz velocity
    projection, so a position ``k`` steps after the action changes by at most
    ``dt**2 * (k - 1/2)`` per unit change of that axis' acceleration.
    """
    return alpha * dt * dt * max(steps - 0.5, 0.5)


@dataclass(frozen=True)
class ReachTube:
    per_step: tuple
    inflation: tuple  # (half_len, half_wid)

    def __len__(self):
        return len(self.per_step)

    def as_array(self) -> np.ndarray:
        return np.stack([b.as_array() for b in self.per_step]) if self.per_step else np.zeros((0, 4))


def _propagate_axis(p, v, a_max, v_lo_cap, v_hi_cap, steps, dt, clip=None):
    """Extreme-trajectory interval propagation for one axis.

    Returns arrays of (p_lo, p_hi) at steps 1..steps. The max-acceleration
    trajectory simultaneously maximizes position and velocity at every step, so
    the bounds are attained whenever ``clip`` does not activate.
    """
    v_lo_cap = min(v_lo_cap, v)
    v_hi_cap = max(v_hi_cap, v)
    p_lo = p_hi = p
    v_lo = v_hi = v
    out = np.empty((steps, 2))
    for k in range(steps):
        v_hi_n = min(v_hi + a_max * dt, v_hi_cap)
        v_lo_n = max(v_lo - a_max * dt, v_lo_cap)
        p_hi = p_hi + 0.5 * (v_hi + v_hi_n) * dt
        p_lo = p_lo + 0.5 * (v_lo + v_lo_n) * dt
        v_hi, v_lo = v_hi_n, v_lo_n
        if clip is not None:
            lo_c, hi_c = clip
            p_lo = min(max(p_lo, lo_c), hi_c)
            p_hi = max(min(p_hi, hi_c), lo_c)
        out[k] = (p_lo, p_hi)
    return out


def reach_tube(agent: AgentState, steps: int, dt: float, road: Road, direction: int = 1) -> ReachTube:
    """Occupancy rectangles of ``agent`` after 1..steps steps, over all admissible behaviour.

    Admissible: piecewise-constant accelerations within the motion bounds,
    longitudinal speed (along ``direction``) within ``[v_min_long, v_max_long]``,
    lateral speed within ``+-v_max_lat`` and the centre staying on the road.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    b = agent.bounds
    lon = _propagate_axis(
        direction * agent.px, direction * agent.vx, b.a_max_long, b.v_min_long, b.v_max_long, steps, dt
    )
    if direction == -1:
        lon = -lon[:, ::-1]
    lat = _propagate_axis(
        agent.py, agent.vy, b.a_max_lat, -b.v_max_lat, b.v_max_lat, steps, dt, clip=(road.y_min, road.y_max)
    )
    boxes = []
    for k in range(steps):
        x = Interval(lon[k, 0], lon[k, 1]).inflate(agent.half_len)
        y = Interval(lat[k, 0], lat[k, 1]).inflate(agent.half_wid).clip(road.y_min, road.y_max)
        boxes.append(Box2(x, y))
    return ReachTube(tuple(boxes), (agent.half_len, agent.half_wid))
