"""Open-loop replay rollouts of the fail-safe imitator, and trajectory metrics."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import step_double_integrator
from .fallback import SafetyOptions, is_behind, momentary_cost, total_safety_cost
from .geometry import AgentState, EgoState, GridPartition, Scenario
from .safe_set import EXTREMAL, LIPSCHITZ, FallbackMemory, default_gamma, infer_safe_set, seed_memory, update_fallback
from .safety_layer import (
    PreSafeGaussian,
    SafePolicy,
    apply,
    build_distance_map,
    build_probability_map,
    log_density,
    sample_presafe,
)

log = logging.getLogger(__name__)

MODES = ("safe-L", "safe-E", "presafe-only", "ttos")
_CERT_MODE = {"safe-L": LIPSCHITZ, "ttos": LIPSCHITZ, "safe-E": EXTREMAL}


class InitiallyUnsafeError(RuntimeError):
    """No evaluated action at the first stage has ``w <= 0``."""


class NoFallbackError(RuntimeError):
    """Empty safe set with no stored fallback to execute."""


@dataclass(frozen=True)
class PolicyConfig:
    grid: tuple = (10, 10)
    mean_source: str = "reference"  # "reference" (demonstration track) or "constant"
    mean_action: tuple = (0.0, 0.0)
    log_std: tuple = (0.0, 0.0)  # pre-squash
    gamma_rule: str = "zoh"
    gamma: Optional[float] = None  # explicit override of the rule
    alpha: float = 2.0
    beta: Optional[float] = None
    layer: str = "distance"
    window_seconds: float = 4.0
    filter_rear: bool = True

    def __post_init__(self):
        if self.mean_source not in ("reference", "constant"):
            raise ValueError(f"unknown mean_source {self.mean_source!r}")
        if self.layer not in ("distance", "probability"):
            raise ValueError(f"unknown layer {self.layer!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")

    _KEYS = {
        "grid": "grid", "meanSource": "mean_source", "meanAction": "mean_action", "logStd": "log_std",
        "gammaRule": "gamma_rule", "gamma": "gamma", "alpha": "alpha", "beta": "beta", "layer": "layer",
        "windowSeconds": "window_seconds", "filterRear": "filter_rear",
    }

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in ((js, getattr(self, py)) for js, py in self._KEYS.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ValueError(f"unknown policy config keys: {sorted(unknown)}")
        kw = {cls._KEYS[k]: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


@dataclass
class StageRecord:
    t: int
    state: tuple
    d: float
    presafe_action: Optional[tuple] = None
    safe_action: Optional[tuple] = None
    log_density: Optional[float] = None
    safe_cell_count: int = 0
    fallback_used: bool = False
    certified: bool = True  # False when an E-mode sample turned out uncertified

    def to_dict(self) -> dict:
        return {
            "t": self.t, "state": list(self.state), "d": self.d,
            "preSafeAction": None if self.presafe_action is None else list(self.presafe_action),
            "safeAction": None if self.safe_action is None else list(self.safe_action),
            "logDensity": finite_or_none(self.log_density), "safeCellCount": self.safe_cell_count,
            "fallbackUsed": self.fallback_used, "certified": self.certified,
        }


@dataclass
class RolloutRecord:
    scenario: str
    mode: str
    seed: int
    stages: list = field(default_factory=list)
    completed: bool = True
    error: Optional[str] = None

    @property
    def collided(self) -> bool:
        return any(s.d > 0 for s in self.stages)

    def positions(self) -> np.ndarray:
        return np.array([s.state[:2] for s in self.stages])

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "mode": self.mode, "seed": self.seed, "completed": self.completed,
                "error": self.error, "collided": self.collided, "stages": [s.to_dict() for s in self.stages]}


@dataclass(frozen=True)
class MetricsReport:
    collision_probability: float
    ade: Optional[float]
    fde: Optional[float]
    horizon_seconds: float
    n_rollouts: int
    n_incomplete: int = 0
    n_skipped: int = 0  # initially unsafe scenarios excluded from evaluation

    def to_dict(self) -> dict:
        return {"collisionProbability": self.collision_probability, "ade": self.ade, "fde": self.fde,
                "horizonSeconds": self.horizon_seconds, "nRollouts": self.n_rollouts,
                "nIncomplete": self.n_incomplete, "nSkipped": self.n_skipped}


# ---------------------------------------------------------------------------
# filters


def agent_at(agent: AgentState, row) -> AgentState:
    return dataclasses.replace(agent, px=float(row[0]), py=float(row[1]), vx=float(row[2]), vy=float(row[3]))


def replayed_others(scenario: Scenario, t: int) -> list:
    """Others at stage ``t`` (1-based) following their recorded tracks; agents
    whose track has no row for that stage have left the recording."""
    if scenario.other_tracks is None:
        return list(scenario.others) if t == 1 else []
    out = []
    for o in scenario.others:
        tr = scenario.other_tracks.get(o.id)
        if tr is None or t > len(tr) or np.any(np.isnan(tr[t - 1])):
            continue
        out.append(agent_at(o, tr[t - 1]))
    return out


def apply_filters(others: Sequence[AgentState], ego: EgoState, direction: int = 1,
                  removed: Optional[set] = None) -> list:
    """Drop agents strictly behind the ego. With ``removed``, the filter is sticky:
    ids are added to it and stay dropped for the rest of the rollout."""
    keep = []
    for o in others:
        if removed is not None and o.id in removed:
            continue
        if is_behind(o, ego, direction):
            if removed is not None:
                removed.add(o.id)
            continue
        keep.append(o)
    return keep


def stage_scenario(scenario: Scenario, t: int, ego: EgoState, others: Sequence[AgentState]) -> Scenario:
    return dataclasses.replace(scenario, ego=ego, others=tuple(others))


def initially_safe(scenario: Scenario, config: PolicyConfig = PolicyConfig(), mode: str = "safe-L") -> bool:
    """Some evaluated first-stage action has ``w <= 0`` (cell centres for L, vertices for E)."""
    ego = scenario.ego
    others = apply_filters(replayed_others(scenario, 1), ego, scenario.direction)
    sc = stage_scenario(scenario, 1, ego, others)
    ss = infer_safe_set(sc, 1, _grid(scenario, config), _CERT_MODE.get(mode, LIPSCHITZ),
                        _gamma(sc, 1, config), SafetyOptions(filter_rear=config.filter_rear))
    return bool(np.min(ss.point_w) <= 0.0)


# ---------------------------------------------------------------------------
# rollout


def _grid(scenario: Scenario, config: PolicyConfig) -> GridPartition:
    return GridPartition(scenario.action_box, int(config.grid[0]), int(config.grid[1]))


def _gamma(scenario: Scenario, t: int, config: PolicyConfig) -> float:
    if config.gamma is not None:
        return float(config.gamma)
    return default_gamma(scenario, t, config.gamma_rule, config.alpha, config.beta)


def reference_action(scenario: Scenario, t: int) -> Optional[np.ndarray]:
    """Demonstrated acceleration at stage ``t`` from consecutive track velocities."""
    tr = scenario.ego_track
    if tr is None or t >= len(tr):
        return None
    return (tr[t, 2:4] - tr[t - 1, 2:4]) / scenario.dt


def presafe_policy(scenario: Scenario, t: int, config: PolicyConfig) -> PreSafeGaussian:
    box = scenario.action_box
    a = reference_action(scenario, t) if config.mean_source == "reference" else None
    if a is None:
        a = np.asarray(config.mean_action, dtype=float)
    # the squashed Gaussian lives on the open box
    margin = 1e-3 * (box.hi - box.lo)
    a = np.clip(a, box.lo + margin, box.hi - margin)
    return PreSafeGaussian.centered_on(a, config.log_std, box)


def rollout(scenario: Scenario, config: PolicyConfig = PolicyConfig(), mode: str = "safe-L",
            seed: int = 0) -> RolloutRecord:
    """Replay ``scenario`` with the ego driven by the (fail-safe) imitator.

    Safe modes infer the safe set each stage against worst-case reach tubes,
    build the layer and sample through it; on an empty safe set the stored
    fallback is executed. ``ttos`` is the same pipeline: the pre-safe policy
    is configured without the layer and the layer is added only here.
    Raises ``InitiallyUnsafeError`` in safe modes when no first-stage action
    is safe. Fallback exhaustion ends the rollout early (``completed=False``).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    rng = np.random.default_rng(seed)
    safe_mode = mode != "presafe-only"
    opts = SafetyOptions(filter_rear=config.filter_rear)
    grid = _grid(scenario, config)
    record = RolloutRecord(scenario.name, mode, int(seed))
    ego = scenario.ego
    removed: set = set()
    memory: Optional[FallbackMemory] = None
    T = scenario.horizon

    for t in range(1, T + 1):
        others = apply_filters(replayed_others(scenario, t), ego, scenario.direction,
                               removed if config.filter_rear else None)
        d = momentary_cost(ego.box(), [o.box() for o in others], scenario.road)
        stage = StageRecord(t, (ego.px, ego.py, ego.vx, ego.vy), float(d))
        record.stages.append(stage)
        if t == T:
            break
        sc = stage_scenario(scenario, t, ego, others)
        presafe = presafe_policy(scenario, t, config)
        a_hat = sample_presafe(presafe, rng)
        stage.presafe_action = tuple(float(v) for v in a_hat)

        if not safe_mode:
            action = a_hat
            stage.log_density = float(presafe.log_density(a_hat))
        else:
            ss = infer_safe_set(sc, t, grid, _CERT_MODE[mode], _gamma(sc, t, config), opts)
            stage.safe_cell_count = len(ss)
            if ss.empty:
                if memory is None or memory.remaining <= 0:
                    best, w_best = ss.best_point()
                    if w_best > 0:
                        if t == 1:
                            raise InitiallyUnsafeError(f"{scenario.name}: no safe first action (min w={w_best:.3g})")
                        record.completed = False
                        record.error = f"stage {t}: empty safe set and no fallback"
                        break
                    memory = seed_memory(best, total_safety_cost(sc, t, best, opts))
                action = memory.next_action()
                memory = memory.advance()
                stage.fallback_used = True
            else:
                if config.layer == "distance":
                    pmap = build_distance_map(grid, ss)
                else:
                    pmap = build_probability_map(grid, ss, presafe)
                policy = SafePolicy(presafe, pmap)
                action = apply(pmap, a_hat)
                stage.log_density = float(log_density(policy, action))
                verdict = total_safety_cost(sc, t, action, opts)
                if verdict.safe:
                    memory = update_fallback(memory, ss, verdict)
                else:
                    # E-mode corners are not a proof off convex instances
                    stage.certified = False
                    memory = None
        stage.safe_action = tuple(float(v) for v in action)
        ego = step_double_integrator(ego, action, scenario.dt)
    return record


def run_rollouts(scenario: Scenario, config: PolicyConfig, mode: str, seeds: Sequence[int]) -> list:
    return [rollout(scenario, config, mode, s) for s in seeds]


# ---------------------------------------------------------------------------
# metrics


def displacement_errors(positions, reference, dt: float, window_seconds: float = 4.0):
    """ADE and FDE over the first ``round(window_seconds / dt)`` stages, stage 1 included."""
    pos = np.asarray(positions, dtype=float)[:, :2]
    ref = np.asarray(reference, dtype=float)[:, :2]
    n = max(int(round(window_seconds / dt)), 1)
    avail = min(len(pos), len(ref))
    if n > avail:
        log.warning("window of %d stages exceeds the %d available; truncating", n, avail)
        n = avail
    err = np.linalg.norm(pos[:n] - ref[:n], axis=1)
    return float(err.mean()), float(err[-1])


def metrics(records: Sequence[RolloutRecord], reference=None, dt: float = 0.2,
            window_seconds: float = 4.0, n_skipped: int = 0) -> MetricsReport:
    """Collision frequency over rollouts plus mean ADE/FDE against ``reference``."""
    if not records:
        return MetricsReport(0.0, None, None, window_seconds, 0, 0, n_skipped)
    coll = sum(r.collided for r in records) / len(records)
    ade = fde = None
    if reference is not None:
        errs = [displacement_errors(r.positions(), reference, dt, window_seconds) for r in records]
        ade = float(np.mean([e[0] for e in errs]))
        fde = float(np.mean([e[1] for e in errs]))
    return MetricsReport(float(coll), ade, fde, window_seconds, len(records),
                         sum(not r.completed for r in records), n_skipped)


def evaluate(scenarios: Sequence[Scenario], config: PolicyConfig, mode: str, seeds: Sequence[int]) -> dict:
    """Rollouts over scenarios x seeds with the initial-safety filter applied to every mode."""
    records, refs, skipped = [], [], []
    for sc in scenarios:
        if not initially_safe(sc, config, mode if mode != "presafe-only" else "safe-L"):
            skipped.append(sc.name)
            continue
        for s in seeds:
            records.append(rollout(sc, config, mode, s))
            refs.append(sc.ego_track)
    report = _pooled_metrics(records, refs, scenarios[0].dt if scenarios else 0.2, config.window_seconds, len(skipped))
    return {"records": records, "metrics": report, "skipped": skipped}


def _pooled_metrics(records, refs, dt, window_seconds, n_skipped) -> MetricsReport:
    if not records or any(r is None for r in refs):
        m = metrics(records, None, dt, window_seconds, n_skipped)
        return m
    errs = [displacement_errors(r.positions(), ref, dt, window_seconds) for r, ref in zip(records, refs)]
    coll = sum(r.collided for r in records) / len(records)
    return MetricsReport(float(coll), float(np.mean([e[0] for e in errs])), float(np.mean([e[1] for e in errs])),
                         window_seconds, len(records), sum(not r.completed for r in records), n_skipped)


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else x
