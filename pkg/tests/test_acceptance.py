"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math

import numpy as np
import pytest

from failsafe_imitation.compounding import (
    build_counterexample,
    check_bounds,
    gap_closed_form,
    kappa_term,
    random_safe_policy,
)
from failsafe_imitation.diagnostics import cell_masses, gradient_error, random_policy, sampling_agreement
from failsafe_imitation.fallback import BRAKE, SafetyOptions, momentary_cost, total_safety_cost_batch
from failsafe_imitation.geometry import Box2, GridPartition, Road, default_action_box
from failsafe_imitation.rollout import PolicyConfig, initially_safe, rollout
from failsafe_imitation.safe_set import LIPSCHITZ, default_gamma, infer_safe_set
from failsafe_imitation.safety_layer import sample_batch
from failsafe_imitation.scenario_io import load_scenario
from failsafe_imitation.cli import bundled_path
from failsafe_imitation.synthetic import adversarial_scenario, random_scenario, road_only_scenario

pytestmark = pytest.mark.slow
BOX = default_action_box()


def dense(cell: Box2, n: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.linspace(cell.x.lo, cell.x.hi, n), np.linspace(cell.y.lo, cell.y.hi, n))
    return np.column_stack([xs.ravel(), ys.ravel()])


def test_01_safe_set_soundness(report):
    rng = np.random.default_rng(101)
    violations = certified = 0
    n_scen = 120
    for i in range(n_scen):
        sc = random_scenario(rng) if i % 2 else adversarial_scenario(rng)
        grid = GridPartition(sc.action_box, 10, 10)
        ss = infer_safe_set(sc, 1, grid, LIPSCHITZ, default_gamma(sc, 1, "fallback"))
        certified += len(ss)
        if ss.empty:
            continue
        pts = np.vstack([dense(grid.cell(k), 11) for k in ss.safe_cells])
        w, _, _ = total_safety_cost_batch(sc, 1, pts)
        violations += int(np.sum(w > 0))
    ok = violations == 0 and certified > 0
    report(1, ok, f"{n_scen} scenarios, {certified} certified cells, {violations} dense-sample violations")
    assert ok


def test_02_zero_collisions(report):
    cfg = PolicyConfig(gamma_rule="fallback")
    fixed = adversarial_scenario()
    collided = n = skipped = fallbacks = 0
    for seed in range(500):
        sc = fixed if seed % 2 == 0 else adversarial_scenario(np.random.default_rng(10_000 + seed))
        if not initially_safe(sc, cfg):
            skipped += 1
            continue
        rec = rollout(sc, cfg, "safe-L", seed)
        n += 1
        collided += rec.collided
        fallbacks += sum(s.fallback_used for s in rec.stages)
    p_safe = collided / n

    bundled = load_scenario(bundled_path("adversarial"))
    wide = PolicyConfig(mean_source="constant", log_std=(1.0, 1.0))
    p_pre = np.mean([rollout(bundled, wide, "presafe-only", s).collided for s in range(100)])
    ok = n > 0 and p_safe == 0.0 and p_pre > 0.0
    report(2, ok, f"safe-L collision probability {p_safe:.2f} over {n} rollouts ({skipped} skipped, "
                  f"{fallbacks} fallback stages); presafe-only {p_pre:.2f} on bundled adversarial")
    assert ok


def test_03_normalization(report):
    rng = np.random.default_rng(303)
    grid = GridPartition(BOX, 10, 10)
    errs = [abs(cell_masses(random_policy(rng, grid, layer)).sum() - 1.0)
            for layer in ("distance", "probability") for _ in range(12)]
    ok = max(errs) <= 1e-3
    report(3, ok, f"{len(errs)} (safe set, theta) pairs, max |mass - 1| = {max(errs):.2e}")
    assert ok


def test_04_sampling_agreement(report):
    rng = np.random.default_rng(404)
    grid = GridPartition(BOX, 10, 10)
    res = [sampling_agreement(random_policy(rng, grid, layer), rng, 100_000)
           for layer in ("distance", "probability") for _ in range(5)]
    ok = all(r["pass"] and r["unsafeHits"] == 0 for r in res)
    report(4, ok, f"{len(res)} configurations x 1e5 samples, max equivalent |z| = "
                  f"{max(r['maxZ'] for r in res):.2f} (bound 4)")
    assert ok


def test_05_gradient(report):
    rng = np.random.default_rng(505)
    grid = GridPartition(BOX, 10, 10)
    errs = []
    while len(errs) < 120:
        pol = random_policy(rng, grid, "distance" if len(errs) % 2 else "probability")
        for a in sample_batch(pol, rng, 6):
            if not grid.on_boundary(a):
                errs.append(gradient_error(pol, a, h=1e-6))
    ok = max(errs) <= 1e-5
    report(5, ok, f"{len(errs)} interior points, max relative error {max(errs):.2e}")
    assert ok


def test_06_linear_bound(report):
    rng = np.random.default_rng(606)
    violations = 0
    for i in range(1000):
        T = int(rng.integers(2, 101)) if i % 10 else 100
        pi = random_safe_policy(build_counterexample(T), rng)
        violations += not check_bounds(T, "linear", policy=pi).holds
    ok = violations == 0
    report(6, ok, f"1000 random safe policies, T in 2..100, {violations} violations")
    assert ok


def test_07_quadratic_regime(report):
    deltas = (0.01, 0.02, 0.05, 0.1)
    bad, worst_closed, min_ratio, checked = [], 0.0, math.inf, 0
    for delta in deltas:
        for T in range(2, 101):
            up = check_bounds(T, "upper", delta=delta)
            worst_closed = max(worst_closed, abs(up.gap - gap_closed_form(delta, T)))
            if not up.holds:
                bad.append(up.line())
            if delta * T <= 1.0:
                lo = check_bounds(T, "lower", delta=delta)
                checked += 1
                if not lo.holds:
                    bad.append(lo.line())
            if delta * T <= 0.2 and 2 * T <= 100:
                min_ratio = min(min_ratio, check_bounds(2 * T, "upper", delta=delta).gap / up.gap)
    ok = not bad and worst_closed <= 1e-12 and min_ratio >= 3.5
    report(7, ok, f"{checked} lower-bound points, closed-form max error {worst_closed:.1e}, "
                  f"min doubling ratio {min_ratio:.3f}, {len(bad)} violations")
    assert ok, bad[:5]


def test_08_kappa(report):
    vals = [kappa_term(T) for T in range(2, 1001)]
    ok = all(0.25 <= v <= math.exp(-1) for v in vals)
    report(8, ok, f"(1 - 1/T)^T in [{min(vals):.4f}, {max(vals):.4f}] for T = 2..1000")
    assert ok


def test_09_corner_property(report):
    rng = np.random.default_rng(909)
    opts = SafetyOptions(kinds=(BRAKE,), open_loop=True)
    worst = -math.inf
    n_boxes = 0
    while n_boxes < 120:
        sc = road_only_scenario(rng)
        for _ in range(4):
            lo = rng.uniform(sc.action_box.lo, sc.action_box.hi)
            hi = rng.uniform(lo, sc.action_box.hi)
            box = Box2.from_bounds(lo[0], hi[0], lo[1], hi[1])
            w_grid, _, _ = total_safety_cost_batch(sc, 1, dense(box, 21), opts)
            w_corner, _, _ = total_safety_cost_batch(sc, 1, box.corners(), opts)
            worst = max(worst, w_grid.max() - w_corner.max())
            n_boxes += 1
    ok = worst <= 1e-9
    report(9, ok, f"{n_boxes} boxes, max(interior max - corner max) = {worst:.2e}")
    assert ok


def test_10_d_lipschitz(report):
    rng = np.random.default_rng(1010)
    road = Road(0.0, 12.0, 4.0)
    worst = -math.inf
    for _ in range(10_000):
        c = rng.uniform([-30, 0], [30, 12])
        delta = rng.uniform(-1, 1, 2) * rng.choice([1e-4, 1e-2, 1.0, 5.0])
        obs = [Box2.centered(*rng.uniform([-30, 0], [30, 12]), 2.5, 1.0) for _ in range(int(rng.integers(0, 4)))]
        d0 = momentary_cost(Box2.centered(*c, 2.5, 1.0), obs, road)
        d1 = momentary_cost(Box2.centered(*(c + delta), 2.5, 1.0), obs, road)
        worst = max(worst, abs(d1 - d0) - 2 * np.max(np.abs(delta)))
    ok = worst <= 1e-9
    report(10, ok, f"10^4 perturbations, max(|d(p+delta) - d(p)| - 2|delta|_inf) = {worst:.2e}")
    assert ok
