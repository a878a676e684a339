"""Momentary safety cost, fallback maneuvers and the min-max total safety cost.

The total safety cost of action ``a`` at stage ``t`` executes ``a`` for one
step and then, for each fallback candidate, takes the worst momentary cost
over stages ``t+1..T`` against the others' reachable rectangles. The best
candidate's value is ``w``; ``w <= 0`` certifies ``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import reach_tube, step_double_integrator
from .geometry import AgentState, Box2, EgoLimits, EgoState, Road, Scenario, box_gap_linf

BRAKE = "brake"
EVASIVE_LEFT = "evasive_left"
EVASIVE_RIGHT = "evasive_right"
ALL_KINDS = (BRAKE, EVASIVE_LEFT, EVASIVE_RIGHT)

DEFAULT_SENTINEL = -1e6


class InfeasibleManeuverError(ValueError):
    pass


class NoFeasibleFallbackError(RuntimeError):
    pass


@dataclass(frozen=True)
class FallbackManeuver:
    kind: str
    accel_seq: np.ndarray = field(compare=False)  # (H, 2)
    trajectory: tuple = field(compare=False)  # H + 1 EgoStates, first is the start

    def __len__(self):
        return len(self.accel_seq)


@dataclass(frozen=True)
class SafetyVerdict:
    w: float
    best_fallback: FallbackManeuver
    worst_stage: int
    action: tuple = ()
    candidate_costs: dict = field(default_factory=dict, compare=False)

    @property
    def safe(self) -> bool:
        return self.w <= 0.0


# ---------------------------------------------------------------------------
# momentary cost


def road_clearance(ego: Box2, road: Road) -> float:
    return min(ego.y.lo - road.y_min, road.y_max - ego.y.hi)


def momentary_cost(ego: Box2, obstacles, road: Road, sentinel: float = DEFAULT_SENTINEL) -> float:
    """Minus the smallest l-inf clearance to obstacles and road edges; ``<= 0`` is safe."""
    clearance = road_clearance(ego, road)
    for ob in obstacles:
        clearance = min(clearance, box_gap_linf(ego, ob))
    return max(-clearance, sentinel)


def momentary_cost_batch(ego_boxes: np.ndarray, obstacles: np.ndarray, road: Road,
                         sentinel: float = DEFAULT_SENTINEL) -> np.ndarray:
    """Vectorized ``momentary_cost``.

    ``ego_boxes`` is (..., S, 4) and ``obstacles`` (M, S, 4) in
    ``[xlo, xhi, ylo, yhi]`` layout; returns (..., S).
    """
    e = ego_boxes
    clearance = np.minimum(e[..., 2] - road.y_min, road.y_max - e[..., 3])
    if obstacles.shape[0]:
        e_ = e[..., None, :, :]  # (..., 1, S, 4)
        gx = np.maximum(obstacles[..., 0] - e_[..., 1], e_[..., 0] - obstacles[..., 1])
        gy = np.maximum(obstacles[..., 2] - e_[..., 3], e_[..., 2] - obstacles[..., 3])
        gap = np.maximum(gx, gy).min(axis=-2)
        clearance = np.minimum(clearance, gap)
    return np.maximum(-clearance, sentinel)


# ---------------------------------------------------------------------------
# maneuvers


def _toward_zero(v: float, dv: float) -> float:
    """Change ``v`` towards zero by at most ``dv`` without overshooting."""
    return math.copysign(max(abs(v) - dv, 0.0), v)


def _rollout(ego: EgoState, accels, dt) -> tuple:
    traj = [ego]
    for a in accels:
        traj.append(step_double_integrator(traj[-1], a, dt))
    return tuple(traj)


def brake_maneuver(ego: EgoState, limits: EgoLimits, steps: int, dt: float) -> FallbackManeuver:
    """Emergency brake: full deceleration until standstill on both axes, then hold."""
    accels = np.zeros((steps, 2))
    vx, vy = ego.vx, ego.vy
    for k in range(steps):
        vx_n = _toward_zero(vx, limits.a_max_long * dt)
        vy_n = _toward_zero(vy, limits.a_max_lat * dt)
        accels[k] = ((vx_n - vx) / dt, (vy_n - vy) / dt)
        vx, vy = vx_n, vy_n
    return FallbackManeuver(BRAKE, accels, _rollout(ego, accels, dt))


def lane_change_steps(offset: float, a_max_lat: float, dt: float) -> int:
    """Steps per half of a rest-to-rest lateral bang-bang over ``offset``."""
    if offset == 0:
        return 0
    if a_max_lat <= 0:
        raise InfeasibleManeuverError("no lateral authority")
    tau = math.sqrt(abs(offset) / a_max_lat)
    return max(1, math.ceil(tau / dt - 1e-9))


def settle_steps(vy: float, a_max_lat: float, dt: float) -> int:
    """Steps needed to bring lateral speed ``vy`` to rest at full deceleration."""
    if vy == 0:
        return 0
    if a_max_lat <= 0:
        raise InfeasibleManeuverError("no lateral authority")
    return math.ceil(abs(vy) / (a_max_lat * dt) - 1e-9)


def lateral_profile(vy: float, offset: float, a_max_lat: float, dt: float, steps: int,
                    settle: int | None = None) -> np.ndarray:
    """Lateral accelerations: settle ``vy`` to zero, then rest-to-rest bang-bang over ``offset``.

    The bang-bang uses ``n`` steps of ``+b`` and ``n`` of ``-b`` with ``n`` the
    continuous switching time rounded up to the step grid and ``b <= a_max_lat``
    chosen so the terminal offset is exact with zero terminal speed.
    """
    m = settle_steps(vy, a_max_lat, dt) if settle is None else settle
    n = lane_change_steps(offset, a_max_lat, dt)
    if m + 2 * n > steps:
        raise InfeasibleManeuverError(
            f"lateral offset {offset} needs {m + 2 * n} steps, only {steps} available"
        )
    out = np.zeros(steps)
    v = vy
    for k in range(m):
        v_n = _toward_zero(v, a_max_lat * dt)
        out[k] = (v_n - v) / dt
        v = v_n
    if n:
        b = abs(offset) / (n * n * dt * dt)
        s = math.copysign(1.0, offset)
        out[m:m + n] = s * b
        out[m + n:m + 2 * n] = -s * b
    return out


def evasive_maneuver(ego: EgoState, limits: EgoLimits, offset: float, steps: int, dt: float,
                     settle: int | None = None) -> FallbackManeuver:
    """Shortest-time lane change by ``offset`` (positive = left) while braking longitudinally."""
    lat = lateral_profile(ego.vy, offset, limits.a_max_lat, dt, steps, settle)
    accels = np.zeros((steps, 2))
    vx = ego.vx
    for k in range(steps):
        vx_n = _toward_zero(vx, limits.a_max_long * dt)
        accels[k, 0] = (vx_n - vx) / dt
        vx = vx_n
    accels[:, 1] = lat
    kind = EVASIVE_LEFT if offset >= 0 else EVASIVE_RIGHT
    return FallbackManeuver(kind, accels, _rollout(ego, accels, dt))


# ---------------------------------------------------------------------------
# total safety cost


def is_behind(agent: AgentState, ego: EgoState, direction: int = 1) -> bool:
    """Agent's front edge strictly behind the ego's rear edge along the driving direction."""
    return direction * agent.px + agent.half_len < direction * ego.px - ego.half_len


def relevant_others(scenario: Scenario, filter_rear: bool = True) -> list:
    if not filter_rear:
        return list(scenario.others)
    return [o for o in scenario.others if not is_behind(o, scenario.ego, scenario.direction)]


def remaining_steps(scenario: Scenario, t: int) -> int:
    steps = scenario.horizon - t
    if steps < 1:
        raise ValueError(f"stage {t} leaves no future stages within horizon {scenario.horizon}")
    return steps


def scenario_settle_steps(scenario: Scenario) -> int:
    """Settle length valid for every action in the box, so the candidate set does not depend on it."""
    box = scenario.action_box
    dt = scenario.dt
    vy_max = max(abs(scenario.ego.vy + box.y.lo * dt), abs(scenario.ego.vy + box.y.hi * dt))
    return settle_steps(vy_max, scenario.ego_limits.a_max_lat, dt)


def _offset(kind: str, road: Road) -> float:
    return {EVASIVE_LEFT: road.lane_width, EVASIVE_RIGHT: -road.lane_width}[kind]


def plan_maneuver(kind: str, start: EgoState, scenario: Scenario, steps: int) -> FallbackManeuver:
    limits = scenario.ego_limits
    if kind == BRAKE:
        return brake_maneuver(start, limits, steps, scenario.dt)
    return evasive_maneuver(start, limits, _offset(kind, scenario.road), steps, scenario.dt,
                            settle=scenario_settle_steps(scenario))


def _reference_start(scenario: Scenario) -> EgoState:
    return step_double_integrator(scenario.ego, scenario.action_box.center, scenario.dt)


@dataclass(frozen=True)
class SafetyOptions:
    kinds: tuple = ALL_KINDS
    sentinel: float = DEFAULT_SENTINEL
    filter_rear: bool = True
    open_loop: bool = False  # replay sequences planned once from the box-centre action


def obstacle_tubes(scenario: Scenario, steps: int, filter_rear: bool = True) -> np.ndarray:
    """(M, steps, 4) reachable rectangles of the relevant others."""
    others = relevant_others(scenario, filter_rear)
    if not others:
        return np.zeros((0, steps, 4))
    return np.stack(
        [reach_tube(o, steps, scenario.dt, scenario.road, scenario.direction).as_array() for o in others]
    )


def total_safety_cost(scenario: Scenario, t: int, a, options: SafetyOptions = SafetyOptions()) -> SafetyVerdict:
    """Min over fallback candidates of the max momentary cost over stages t+1..T."""
    steps = remaining_steps(scenario, t)
    start = step_double_integrator(scenario.ego, a, scenario.dt)
    tubes = obstacle_tubes(scenario, steps, options.filter_rear)
    ref = _reference_start(scenario) if options.open_loop else None

    best = None
    costs = {}
    for kind in options.kinds:
        try:
            plan = plan_maneuver(kind, ref if ref is not None else start, scenario, steps - 1)
        except InfeasibleManeuverError:
            continue
        if ref is not None:
            plan = FallbackManeuver(plan.kind, plan.accel_seq, _rollout(start, plan.accel_seq, scenario.dt))
        stage_costs = [
            momentary_cost(plan.trajectory[k].box(), [Box2.from_bounds(*tb[k]) for tb in tubes],
                           scenario.road, options.sentinel)
            for k in range(steps)
        ]
        k_worst = int(np.argmax(stage_costs))
        costs[kind] = stage_costs[k_worst]
        if best is None or stage_costs[k_worst] < best[0]:
            best = (stage_costs[k_worst], plan, t + 1 + k_worst)
    if best is None:
        raise NoFeasibleFallbackError("every fallback candidate is infeasible")
    return SafetyVerdict(float(best[0]), best[1], best[2], (float(a[0]), float(a[1])), costs)


def _axis_fallback(p1, v1, steps, dt, a_max, lateral_plan=None):
    """Positions (N, steps) of one axis: stage t+1 given, then projection braking or a fixed plan."""
    out = np.empty(p1.shape + (steps,))
    p, v = p1, v1
    out[..., 0] = p
    for k in range(1, steps):
        if lateral_plan is not None and k - 1 < len(lateral_plan) and lateral_plan[k - 1] is not None:
            v_n = v + lateral_plan[k - 1] * dt
        else:
            v_n = np.copysign(np.maximum(np.abs(v) - a_max * dt, 0.0), v)
        p = p + 0.5 * (v + v_n) * dt
        v = v_n
        out[..., k] = p
    return out


def total_safety_cost_batch(scenario: Scenario, t: int, actions,
                            options: SafetyOptions = SafetyOptions()):
    """Vectorized ``w`` for an (N, 2) array of actions.

    Returns ``(w, best_kind_index, worst_stage)`` arrays; kind indices refer
    to ``options.kinds`` and are -1 never (an error is raised if nothing is
    feasible).
    """
    acts = np.atleast_2d(np.asarray(actions, dtype=float))
    steps = remaining_steps(scenario, t)
    dt = scenario.dt
    ego = scenario.ego
    lim = scenario.ego_limits
    tubes = obstacle_tubes(scenario, steps, options.filter_rear)

    px1 = ego.px + ego.vx * dt + 0.5 * acts[:, 0] * dt * dt
    py1 = ego.py + ego.vy * dt + 0.5 * acts[:, 1] * dt * dt
    vx1 = ego.vx + acts[:, 0] * dt
    vy1 = ego.vy + acts[:, 1] * dt

    ref_plans = {}
    if options.open_loop:
        ref = _reference_start(scenario)
        for kind in options.kinds:
            try:
                ref_plans[kind] = plan_maneuver(kind, ref, scenario, steps - 1).accel_seq
            except InfeasibleManeuverError:
                ref_plans[kind] = None

    m = scenario_settle_steps(scenario)
    per_kind = []
    kinds_ok = []
    for ki, kind in enumerate(options.kinds):
        if options.open_loop:
            seq = ref_plans[kind]
            if seq is None:
                continue
            xs = _axis_fallback(px1, vx1, steps, dt, lim.a_max_long, list(seq[:, 0]))
            ys = _axis_fallback(py1, vy1, steps, dt, lim.a_max_lat, list(seq[:, 1]))
        else:
            xs = _axis_fallback(px1, vx1, steps, dt, lim.a_max_long)
            if kind == BRAKE:
                ys = _axis_fallback(py1, vy1, steps, dt, lim.a_max_lat)
            else:
                # settle by projection, then the fixed bang-bang accelerations
                n = lane_change_steps(_offset(kind, scenario.road), lim.a_max_lat, dt)
                if m + 2 * n > steps - 1:
                    continue
                prof = lateral_profile(0.0, _offset(kind, scenario.road), lim.a_max_lat, dt,
                                       steps - 1 - m, settle=0)
                plan = [None] * m + list(prof)
                ys = _axis_fallback(py1, vy1, steps, dt, lim.a_max_lat, plan)
        boxes = np.stack(
            [xs - ego.half_len, xs + ego.half_len, ys - ego.half_wid, ys + ego.half_wid], axis=-1
        )  # (N, steps, 4)
        d = momentary_cost_batch(boxes, tubes, scenario.road, options.sentinel)
        per_kind.append(d)
        kinds_ok.append(ki)
    if not per_kind:
        raise NoFeasibleFallbackError("every fallback candidate is infeasible")
    d_all = np.stack(per_kind)  # (K, N, steps)
    worst = d_all.max(axis=2)
    best_k = worst.argmin(axis=0)
    w = worst[best_k, np.arange(len(acts))]
    worst_stage = t + 1 + d_all[best_k, np.arange(len(acts))].argmax(axis=1)
    return w, np.asarray(kinds_ok)[best_k], worst_stage
