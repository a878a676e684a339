"""Exact tabular counterexample for linear vs quadratic compounding imitation error.

States are ``(dx, dv, lane)`` deviations from the demonstrator. Longitudinal
transitions follow the discrete double integrator ``dx' = dx + dv``,
``dv' = dv + acc``; the action's lane is applied instantly. All state
distributions are propagated exactly, no sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LEFT, RIGHT = "l", "r"

STATES = ((0, 0, LEFT), (0, 1, LEFT), (1, 0, LEFT), (1, 0, RIGHT), (1, -1, LEFT))
ACTIONS = ((0, LEFT), (1, LEFT), (-1, LEFT), (-1, RIGHT), (0, RIGHT))
S_D = 0  # demonstrator state (0, 0, l)

# actions drawn in the counterexample figure, per state
_ALLOWED = {
    (0, 0, LEFT): ((0, LEFT), (1, LEFT)),
    (0, 1, LEFT): ((-1, LEFT), (-1, RIGHT)),
    (1, 0, LEFT): ((-1, LEFT),),
    (1, -1, LEFT): ((1, LEFT),),
    (1, 0, RIGHT): ((0, RIGHT),),
}


def successor(state, action):
    dx, dv, _ = state
    acc, lane = action
    return (dx + dv, dv + acc, lane)


def is_unsafe_state(state) -> bool:
    """Too close to the front vehicle on the main lane."""
    dx, _, lane = state
    return lane == LEFT and dx >= 1


@dataclass(frozen=True)
class TabularMDP:
    states: tuple
    actions: tuple
    allowed: np.ndarray  # (S, A) bool
    succ: np.ndarray  # (S, A) int, -1 where not allowed
    cost: np.ndarray  # (S,)
    unsafe: np.ndarray  # (S,) bool
    horizon: int

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def transition(self) -> np.ndarray:
        """(S, A, S) 0/1 tensor of the deterministic successors."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        s, a = np.nonzero(self.allowed)
        P[s, a, self.succ[s, a]] = 1.0
        return P

    def safe_actions(self) -> np.ndarray:
        """Allowed actions whose successor is not unsafe."""
        ok = self.allowed.copy()
        s, a = np.nonzero(self.allowed)
        ok[s, a] = ~self.unsafe[self.succ[s, a]]
        return ok

    def with_cost(self, cost) -> "TabularMDP":
        return TabularMDP(self.states, self.actions, self.allowed, self.succ,
                          np.asarray(cost, dtype=float), self.unsafe, self.horizon)

    def with_horizon(self, T: int) -> "TabularMDP":
        return TabularMDP(self.states, self.actions, self.allowed, self.succ, self.cost, self.unsafe, T)


def build_counterexample(T: int) -> TabularMDP:
    if T < 2:
        raise ValueError("horizon must be at least 2")
    S, A = len(STATES), len(ACTIONS)
    allowed = np.zeros((S, A), dtype=bool)
    succ = -np.ones((S, A), dtype=int)
    for i, s in enumerate(STATES):
        for act in _ALLOWED[s]:
            j = ACTIONS.index(act)
            nxt = successor(s, act)
            if nxt not in STATES:
                raise AssertionError(f"{s} --{act}--> {nxt} leaves the state set")
            allowed[i, j] = True
            succ[i, j] = STATES.index(nxt)
    cost = np.array([0.0 if i == S_D else 1.0 for i in range(S)])
    unsafe = np.array([is_unsafe_state(s) for s in STATES])
    return TabularMDP(STATES, ACTIONS, allowed, succ, cost, unsafe, T)


def reachable(mdp: TabularMDP, policy: np.ndarray, start: int = S_D) -> set:
    seen, todo = {start}, [start]
    while todo:
        s = todo.pop()
        for a in np.flatnonzero(policy[s] > 0):
            n = int(mdp.succ[s, a])
            if n not in seen:
                seen.add(n)
                todo.append(n)
    return seen


def _policy(mdp: TabularMDP, choices: dict) -> np.ndarray:
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    for s, probs in choices.items():
        for act, p in probs.items():
            pi[STATES.index(s), ACTIONS.index(act)] = p
    return pi


def make_policies(mdp: TabularMDP, delta: float) -> dict:
    """Demonstrator ``D``, unconstrained imitator ``U`` and test-time-only-safe ``O``.

    ``U`` deviates with probability ``delta`` at the demonstrator state and then
    recovers through the unsafe states; ``O`` is ``U`` with the safety layer,
    which forces the lane change onto the side strip where it stays.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    s0, s1, s2, s3, s4 = STATES
    shared = {
        s2: {(-1, LEFT): 1.0},
        s3: {(0, RIGHT): 1.0},
        s4: {(1, LEFT): 1.0},
    }
    deviate = {(0, LEFT): 1.0 - delta, (1, LEFT): delta}
    D = _policy(mdp, {s0: {(0, LEFT): 1.0}, s1: {(-1, RIGHT): 1.0}, **shared})
    U = _policy(mdp, {s0: deviate, s1: {(-1, LEFT): 1.0}, **shared})
    O = _policy(mdp, {s0: deviate, s1: {(-1, RIGHT): 1.0}, **shared})
    return {"D": D, "U": U, "O": O}


def point_mass(mdp: TabularMDP, s: int = S_D) -> np.ndarray:
    p = np.zeros(mdp.n_states)
    p[s] = 1.0
    return p


def stationary_init(mdp: TabularMDP, delta: float) -> np.ndarray:
    """Stationary law of ``U``: ``(1, delta, delta, delta) / (1 + 3 delta)`` on its cycle."""
    p = np.zeros(mdp.n_states)
    cycle = [STATES.index(s) for s in ((0, 0, LEFT), (0, 1, LEFT), (1, 0, LEFT), (1, -1, LEFT))]
    p[cycle] = np.array([1.0, delta, delta, delta]) / (1.0 + 3.0 * delta)
    return p


def propagate(mdp: TabularMDP, policy: np.ndarray, init: np.ndarray) -> np.ndarray:
    """State distributions at stages 1..T as a (T, S) array."""
    P = mdp.transition()
    M = np.einsum("sa,sab->sb", policy, P)  # state-to-state kernel under the policy
    out = np.empty((mdp.horizon, mdp.n_states))
    p = np.asarray(init, dtype=float)
    for t in range(mdp.horizon):
        out[t] = p
        p = p @ M
    return out


def occupancy(mdp: TabularMDP, policy: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Time-averaged state-action distribution, (S, A)."""
    return propagate(mdp, policy, init).mean(axis=0)[:, None] * policy


def tv_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(rho1) - np.asarray(rho2)).sum())


def value(mdp: TabularMDP, policy: np.ndarray, init: np.ndarray) -> float:
    """Total expected cost over stages 1..T."""
    return float((propagate(mdp, policy, init) @ mdp.cost).sum())


def gap_closed_form(delta: float, T: int) -> float:
    """``sum_{t=1..T} 1 - (1 - delta)**(t-1)`` for ``O`` started at the demonstrator state."""
    if delta == 0:
        return 0.0
    return T - (1.0 - (1.0 - delta) ** T) / delta


def gap_shifted_index(delta: float, T: int) -> float:
    """``sum_{t=1..T} 1 - (1 - delta)**t``: the same gap if the first deviation
    could already show at stage 1. Reported next to the exact value only."""
    if delta == 0:
        return 0.0
    return T - (1.0 - delta) * (1.0 - (1.0 - delta) ** T) / delta


def kappa_term(T: int) -> float:
    return (1.0 - 1.0 / T) ** T


def random_safe_policy(mdp: TabularMDP, rng: np.random.Generator) -> np.ndarray:
    """Random policy putting no mass on actions that enter an unsafe state."""
    safe = mdp.safe_actions()
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    for s in range(mdp.n_states):
        support = np.flatnonzero(safe[s]) if safe[s].any() else np.flatnonzero(mdp.allowed[s])
        pi[s, support] = rng.dirichlet(np.ones(len(support)))
    return pi


@dataclass(frozen=True)
class BoundReport:
    which: str
    T: int
    delta: float
    eps: float
    gap: float
    bound: float
    holds: bool
    note: str = ""

    def line(self) -> str:
        rel = "<=" if self.which != "lower" else ">="
        flag = "PASS" if self.holds else "FAIL"
        return (f"{flag} {self.which} T={self.T} delta={self.delta:g} eps={self.eps:.6g}: "
                f"|gap|={self.gap:.6g} {rel} {self.bound:.6g} {self.note}").rstrip()


def check_bounds(T: int, which: str, delta: float | None = None, eps: float | None = None,
                 policy: np.ndarray | None = None, init: np.ndarray | None = None,
                 cost: np.ndarray | None = None, tol: float = 1e-12) -> BoundReport:
    """Check one of the compounding-error bounds on the counterexample MDP.

    ``linear``: ``policy`` (default: a safe policy built from ``delta``)
    against ``D``, with the measured TV distance as epsilon.
    ``lower`` / ``upper``: ``O`` at deviation ``delta = eps / 4``.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    mdp = build_counterexample(T)
    if cost is not None:
        mdp = mdp.with_cost(cost)
    c_inf = float(np.max(np.abs(mdp.cost)))
    if delta is None and eps is not None:
        delta = eps / 4.0
    if delta is None:
        delta = 0.0
    pols = make_policies(mdp, delta)
    D = pols["D"]
    rho_d = occupancy(mdp, D, point_mass(mdp))
    v_d = value(mdp, D, point_mass(mdp))

    if which == "linear":
        pi = pols["O"] if policy is None else policy
        start = point_mass(mdp) if init is None else init
        measured = tv_distance(occupancy(mdp, pi, start), rho_d)
        gap = abs(value(mdp, pi, start) - v_d)
        bound = 2.0 * measured * T * c_inf
        return BoundReport(which, T, delta, measured, gap, bound, gap <= bound + tol)

    if eps is None:
        eps = 4.0 * delta
    gap = abs(value(mdp, pols["O"], point_mass(mdp)) - v_d)
    closed = gap_closed_form(delta, T) * c_inf
    closed_ok = abs(gap - closed) <= tol * max(1.0, closed)
    if which == "lower":
        if delta * T > 1.0:
            raise ValueError("the quadratic lower bound form needs delta * T <= 1")
        bound = delta * T * T * c_inf / 8.0
        return BoundReport(which, T, delta, eps, gap, bound, bool(gap >= bound and closed_ok),
                           "" if closed_ok else f"closed form mismatch {closed}")
    if which == "upper":
        nu = 1.0  # demonstrator occupancy is a point mass
        bound = 4.0 * eps / nu * T * T * c_inf
        rho_u = occupancy(mdp, pols["U"], stationary_init(mdp, delta))
        tv_u = tv_distance(rho_u, rho_d)
        ok = gap <= bound + tol and tv_u <= eps + tol
        return BoundReport(which, T, delta, eps, gap, bound, bool(ok), f"D_TV(D,U)={tv_u:.6g}")
    raise ValueError(f"unknown bound {which!r}")


SWEEP_COLUMNS = ("T", "delta", "eps", "eps_measured", "v_gap_exact", "v_gap_closed_form",
                 "v_gap_shifted_index",                  "lower_bound", "upper_bound", "lower_applicable", "closed_form_pass",
                 "lower_pass", "upper_pass")


def sweep(t_values, deltas) -> list:
    """Rows of the (T, delta) sweep of the quadratic-regime bounds."""
    rows = []
    for delta in deltas:
        for T in t_values:
            mdp = build_counterexample(T)
            pols = make_policies(mdp, delta)
            eps = 4.0 * delta
            rho_d = occupancy(mdp, pols["D"], point_mass(mdp))
            eps_measured = tv_distance(occupancy(mdp, pols["U"], stationary_init(mdp, delta)), rho_d)
            gap = abs(value(mdp, pols["O"], point_mass(mdp)) - value(mdp, pols["D"], point_mass(mdp)))
            closed = gap_closed_form(delta, T)
            lower = delta * T * T / 8.0
            upper = 4.0 * eps * T * T
            applicable = delta * T <= 1.0
            rows.append({
                "T": T,
                "delta": delta,
                "eps": eps,
                "eps_measured": eps_measured,
                "v_gap_exact": gap,
                "v_gap_closed_form": closed,
                "v_gap_shifted_index": gap_shifted_index(delta, T),
                "lower_bound": lower,
                "upper_bound": upper,
                "lower_applicable": applicable,
                "closed_form_pass": math.isclose(gap, closed, rel_tol=1e-12, abs_tol=1e-12),
                "lower_pass": (gap >= lower) if applicable else True,
                "upper_pass": gap <= upper and eps_measured <= eps,
            })
    return rows
