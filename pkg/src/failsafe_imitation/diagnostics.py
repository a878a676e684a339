"""Numerical checks of the safety layer: normalization, sampling agreement, gradients."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.stats import binom, norm

from .geometry import Box2, GridPartition, default_action_box
from .safe_set import SafeSet
from .safety_layer import (
    PreSafeGaussian,
    SafePolicy,
    build_distance_map,
    build_probability_map,
    density,
    grad_log_density,
    log_density,
    sample_batch,
)


def random_safe_set(rng: np.random.Generator, grid: GridPartition, p_safe: Optional[float] = None) -> SafeSet:
    p = rng.uniform(0.05, 0.9) if p_safe is None else p_safe
    mask = rng.random(grid.n_cells) < p
    if not mask.any():
        mask[rng.integers(grid.n_cells)] = True
    cells = tuple(int(k) for k in np.flatnonzero(mask))
    return SafeSet(grid, cells, {k: (-1.0,) for k in cells}, "synthetic")


def random_presafe(rng: np.random.Generator, box: Box2) -> PreSafeGaussian:
    return PreSafeGaussian(tuple(rng.uniform(-2.0, 2.0, 2)), tuple(rng.uniform(-1.0, 1.0, 2)), box)


def random_policy(rng: np.random.Generator, grid: GridPartition, layer: str = "distance") -> SafePolicy:
    ss = random_safe_set(rng, grid)
    ps = random_presafe(rng, grid.bounds)
    pmap = build_distance_map(grid, ss) if layer == "distance" else build_probability_map(grid, ss, ps)
    return SafePolicy(ps, pmap)


def tanh_sinh_nodes(lo: float, hi: float, h: float = 0.125, t_max: float = 3.2):
    """Double-exponential nodes/weights on ``[lo, hi]``; robust to endpoint singularities."""
    t = np.arange(-t_max, t_max + 0.5 * h, h)
    s = 0.5 * np.pi * np.sinh(t)
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    return mid + half * np.tanh(s), half * h * 0.5 * np.pi * np.cosh(t) / np.cosh(s) ** 2


def cell_masses(policy: SafePolicy, h: float = 0.125, t_max: float = 3.2) -> np.ndarray:
    """Per-cell integral of ``density`` by tensor tanh-sinh quadrature.

    The density is smooth inside each cell but may blow up toward cell edges
    that are images of the action-box boundary, which the double-exponential
    node clustering absorbs.
    """
    grid = policy.pmap.grid
    pts, wts, owner = [], [], []
    for k in range(grid.n_cells):
        c = grid.cell(k)
        ax, wx = tanh_sinh_nodes(c.x.lo, c.x.hi, h, t_max)
        ay, wy = tanh_sinh_nodes(c.y.lo, c.y.hi, h, t_max)
        # keep nodes inside the half-open cell under rounding
        ax = np.clip(ax, c.x.lo, np.nextafter(c.x.hi, -np.inf))
        ay = np.clip(ay, c.y.lo, np.nextafter(c.y.hi, -np.inf))
        gx, gy = np.meshgrid(ax, ay, indexing="ij")
        pts.append(np.column_stack([gx.ravel(), gy.ravel()]))
        wts.append(np.outer(wx, wy).ravel())
        owner.append(np.full(gx.size, k))
    vals = density(policy, np.concatenate(pts))
    return np.bincount(np.concatenate(owner), weights=np.concatenate(wts) * vals, minlength=grid.n_cells)


def exact_cell_masses(policy: SafePolicy) -> np.ndarray:
    """Masses from the pre-safe normal CDF: each safe cell receives its own mass
    plus that of every cell mapped onto it."""
    pm = policy.pmap
    pre = np.array([policy.presafe.cell_mass(pm.grid.cell(k)) for k in range(pm.grid.n_cells)])
    out = np.where(pm.safe_mask, pre, 0.0)
    for src, tr in enumerate(pm.transforms):
        if not pm.safe_mask[src]:
            out[tr.target_cell] += pre[src]
    return out


def sampling_agreement(policy: SafePolicy, rng: np.random.Generator, n: int = 100_000,
                       masses: Optional[np.ndarray] = None, n_sigma: float = 4.0) -> dict:
    """Compare per-cell sample counts with ``n`` times the integrated cell masses.

    Each cell count is tested against its binomial law at the two-sided level
    of an ``n_sigma`` normal bound. For well-populated cells this is the usual
    ``|count - n p| <= n_sigma * sqrt(n p (1 - p))``; for cells expecting
    only a handful of samples the exact tail is used instead of the normal
    approximation. ``maxZ`` is the largest equivalent normal score.
    """
    grid = policy.pmap.grid
    p = np.clip(cell_masses(policy) if masses is None else masses, 0.0, 1.0)
    pts = sample_batch(policy, rng, n)
    counts = np.bincount(grid.cells_of(pts), minlength=grid.n_cells)
    lower = binom.cdf(counts, n, p)
    upper = binom.sf(counts - 1, n, p)
    pval = np.minimum(1.0, 2.0 * np.minimum(lower, upper))
    z = norm.isf(pval / 2.0)
    return {"maxZ": float(z.max()), "pass": bool(np.all(pval >= 2.0 * norm.sf(n_sigma))),
            "unsafeHits": int(counts[~policy.pmap.safe_mask].sum())}


def finite_difference_grad(policy: SafePolicy, a, h: float = 1e-6) -> np.ndarray:
    th = policy.presafe.theta
    g = np.empty(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        up = log_density(SafePolicy(policy.presafe.with_theta(th + e), policy.pmap), a)
        dn = log_density(SafePolicy(policy.presafe.with_theta(th - e), policy.pmap), a)
        g[i] = (up - dn) / (2 * h)
    return g


def gradient_error(policy: SafePolicy, a, h: float = 1e-6) -> float:
    """``|analytic - fd|_inf / max(1, |analytic|_inf)``."""
    g = grad_log_density(policy, a)
    fd = finite_difference_grad(policy, a, h)
    return float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))))


def density_check(seed: int = 0, trials: int = 20, grid_shape=(10, 10), points_per_trial: int = 5,
                  samples: int = 0) -> dict:
    """Report over ``trials`` random (safe set, parameters) pairs on the default action box."""
    rng = np.random.default_rng(seed)
    grid = GridPartition(default_action_box(), *grid_shape)
    rows = []
    for i in range(trials):
        layer = "distance" if i % 2 == 0 else "probability"
        pol = random_policy(rng, grid, layer)
        masses = cell_masses(pol)
        total = float(masses.sum())
        pts = sample_batch(pol, rng, points_per_trial)
        errs = [gradient_error(pol, a) for a in pts if not grid.on_boundary(a)]
        row = {"trial": i, "layer": layer, "nSafe": int(pol.pmap.safe_mask.sum()),
               "normalization": total, "normalizationPass": abs(total - 1.0) <= 1e-3,
               "maxGradRelErr": max(errs) if errs else 0.0,
               "gradPass": all(e <= 1e-5 for e in errs)}
        if samples:
            agr = sampling_agreement(pol, rng, samples, masses)
            row["samplingMaxZ"] = agr["maxZ"]
            row["samplingPass"] = agr["pass"]
        rows.append(row)
    flags = [k for k in rows[0] if k.endswith("Pass")] if rows else []
    return {"seed": seed, "trials": rows, "allPass": all(r[f] for r in rows for f in flags)}
