"""Synthetic scenarios: empty road, braking-lead adversarial traffic, random traffic.

Recorded tracks of other vehicles are generated inside their motion bounds,
so the worst-case reach tubes always contain the replayed motion.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .dynamics import step_double_integrator
from .geometry import AgentState, EgoState, MotionBounds, Road, Scenario

DEFAULT_OTHER_BOUNDS = MotionBounds(a_max_long=6.0, a_max_lat=0.5, v_max_long=40.0, v_min_long=0.0, v_max_lat=0.5)
THREE_LANES = Road(0.0, 12.0, 4.0)


def simulate_track(agent: AgentState, accel: Callable[[int, np.ndarray], tuple], steps: int, dt: float,
                   direction: int = 1) -> np.ndarray:
    """(steps, 4) rows ``[px, py, vx, vy]`` starting at ``agent``.

    ``accel(k, row)`` proposes a signed (longitudinal, lateral) acceleration
    in the driving frame. It is clipped to the agent's bounds and to the
    velocity caps, which keeps every row reachable under the same bounds.
    """
    b = agent.bounds
    rows = np.empty((steps, 4))
    rows[0] = (agent.px, agent.py, agent.vx, agent.vy)
    for k in range(1, steps):
        p_x, p_y, v_x, v_y = rows[k - 1]
        ax, ay = accel(k - 1, rows[k - 1])
        s = direction * v_x
        ax = float(np.clip(ax, -b.a_max_long, b.a_max_long))
        ay = float(np.clip(ay, -b.a_max_lat, b.a_max_lat))
        s_lo = min(b.v_min_long, s)
        s_hi = max(b.v_max_long, s)
        s_new = float(np.clip(s + ax * dt, max(s_lo, s - b.a_max_long * dt), min(s_hi, s + b.a_max_long * dt)))
        vy_cap = max(b.v_max_lat, abs(v_y))
        vy_new = float(np.clip(v_y + ay * dt, -vy_cap, vy_cap))
        vx_new = direction * s_new
        rows[k] = (p_x + 0.5 * (v_x + vx_new) * dt, p_y + 0.5 * (v_y + vy_new) * dt, vx_new, vy_new)
    return rows


def ego_reference(ego: EgoState, steps: int, dt: float, decel: float = 0.0, direction: int = 1) -> np.ndarray:
    """Demonstration track: straight, constant braking toward standstill."""
    rows = np.empty((steps, 4))
    s = ego
    for k in range(steps):
        rows[k] = (s.px, s.py, s.vx, s.vy)
        v_next = direction * max(direction * s.vx - decel * dt, 0.0)
        s = step_double_integrator(s, ((v_next - s.vx) / dt, 0.0), dt)
    return rows


def empty_road_scenario(horizon: int = 20, dt: float = 0.2) -> Scenario:
    ego = EgoState(0.0, 0.0, 25.0, 0.0)
    return Scenario(Road(), ego, (), dt, horizon, ego_track=ego_reference(ego, horizon, dt),
                    other_tracks={}, name="empty_road")


def adversarial_scenario(rng: Optional[np.random.Generator] = None, horizon: int = 20, dt: float = 0.2,
                         name: str = "adversarial") -> Scenario:
    """Ego in the middle of three lanes behind a lead vehicle that brakes hard.

    Without an ``rng`` the fixed bundled layout is returned; with one, gaps,
    speeds, braking onset and the neighbours' accelerations are randomized.
    """
    if rng is None:
        ego_v, gap, lead_v, onset = 25.0, 30.0, 25.0, 0
        left = (8.0, 26.0)
        right = (40.0, 22.0)
        rear = (-20.0, 27.0)
        jitter = None
    else:
        ego_v = float(rng.uniform(20.0, 30.0))
        gap = float(rng.uniform(18.0, 40.0))
        lead_v = float(rng.uniform(max(ego_v - 6.0, 10.0), ego_v + 2.0))
        onset = int(rng.integers(0, horizon // 2))
        left = (float(rng.uniform(-10.0, 40.0)), float(rng.uniform(18.0, 32.0)))
        right = (float(rng.uniform(-10.0, 50.0)), float(rng.uniform(18.0, 32.0)))
        rear = (float(rng.uniform(-40.0, -15.0)), float(rng.uniform(20.0, 32.0)))
        jitter = rng

    ego = EgoState(0.0, 6.0, ego_v, 0.0)
    bounds = DEFAULT_OTHER_BOUNDS
    lead = AgentState(gap + 5.0, 6.0, lead_v, 0.0, bounds, id=1)
    l_car = AgentState(left[0], 10.0, left[1], 0.0, bounds, id=2)
    r_car = AgentState(right[0], 2.0, right[1], 0.0, bounds, id=3)
    rear_car = AgentState(rear[0], 10.0, rear[1], 0.0, bounds, id=4)
    others = (lead, l_car, r_car, rear_car)

    def lead_accel(k, row):
        return (-bounds.a_max_long if k >= onset else 0.0, 0.0)

    def wander(seed_rng):
        if seed_rng is None:
            return lambda k, row: (0.0, 0.0)
        ax = seed_rng.uniform(-bounds.a_max_long, bounds.a_max_long, horizon)
        ay = seed_rng.uniform(-bounds.a_max_lat, bounds.a_max_lat, horizon)
        return lambda k, row: (ax[k], ay[k])

    tracks = {
        1: simulate_track(lead, lead_accel, horizon, dt),
        2: simulate_track(l_car, wander(jitter), horizon, dt),
        3: simulate_track(r_car, wander(jitter), horizon, dt),
        4: simulate_track(rear_car, wander(jitter), horizon, dt),
    }
    return Scenario(THREE_LANES, ego, others, dt, horizon, ego_track=ego_reference(ego, horizon, dt, decel=3.0),
                    other_tracks=tracks, name=name)


def random_scenario(rng: np.random.Generator, horizon: int = 20, dt: float = 0.2, n_others: int = 3) -> Scenario:
    """Ego on a three-lane road with others at random offsets, speeds and lanes."""
    ego = EgoState(0.0, float(rng.choice([2.0, 6.0, 10.0]) + rng.uniform(-0.5, 0.5)),
                   float(rng.uniform(10.0, 30.0)), float(rng.uniform(-0.5, 0.5)))
    others = []
    for i in range(n_others):
        others.append(AgentState(float(rng.uniform(-20.0, 60.0)), float(rng.choice([2.0, 6.0, 10.0])),
                                 float(rng.uniform(5.0, 35.0)), 0.0, DEFAULT_OTHER_BOUNDS, id=i + 1))
    return Scenario(THREE_LANES, ego, tuple(others), dt, horizon, name="random")


def road_only_scenario(rng: np.random.Generator, horizon: int = 6, dt: float = 0.2) -> Scenario:
    """No other traffic on a narrow bounded road; ``w`` is then convex in the action
    under open-loop brake fallbacks (a max of affine functions of the action)."""
    width = float(rng.uniform(3.0, 6.0))
    ego = EgoState(0.0, float(rng.uniform(1.2, width - 1.2)), float(rng.uniform(5.0, 30.0)),
                   float(rng.uniform(-1.0, 1.0)))
    return Scenario(Road(0.0, width, width), ego, (), dt, horizon, name="road_only")
