"""Piecewise-diffeomorphic safety layer over the action grid.

Safe cells are left alone; every other cell is mapped affinely onto one safe
cell. The safe action's density is the sum of the change-of-variables terms
of all cells mapping onto the query point, which keeps density and
parameter gradients in closed form even though the map is not injective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit, log_ndtr, logsumexp

from .geometry import Box2, GridPartition, OutOfDomainError
from .safe_set import SafeSet


class EmptySafeSetError(ValueError):
    pass


class BoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Affine:
    """``x -> scale * x + offset``, mapping its source cell onto ``target_box``."""

    target_cell: int
    scale: tuple
    offset: tuple
    target_box: Box2

    def forward(self, x):
        return np.asarray(self.scale) * x + np.asarray(self.offset)

    def inverse(self, y):
        return (y - np.asarray(self.offset)) / np.asarray(self.scale)

    @property
    def inv_jac_det(self) -> float:
        return 1.0 / (self.scale[0] * self.scale[1])


def affine_between(src: Box2, dst: Box2, target_cell: int) -> Affine:
    sx = dst.x.width / src.x.width
    sy = dst.y.width / src.y.width
    return Affine(target_cell, (sx, sy), (dst.x.lo - sx * src.x.lo, dst.y.lo - sy * src.y.lo), dst)


@dataclass(frozen=True)
class PiecewiseMap:
    grid: GridPartition
    transforms: tuple  # one Identity/Affine per cell
    sources_by_target: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.transforms) != self.grid.n_cells:
            raise ValueError("need one transform per cell")
        rev: dict = {}
        for k, tr in enumerate(self.transforms):
            if isinstance(tr, Affine):
                if not isinstance(self.transforms[tr.target_cell], Identity):
                    raise ValueError(f"cell {k} targets non-safe cell {tr.target_cell}")
                if tr.scale[0] <= 0 or tr.scale[1] <= 0:
                    raise ValueError("affine scales must be positive")
                rev.setdefault(tr.target_cell, []).append(k)
        object.__setattr__(self, "sources_by_target", {k: tuple(v) for k, v in rev.items()})

    @property
    def safe_mask(self) -> np.ndarray:
        return np.array([isinstance(tr, Identity) for tr in self.transforms])


def _check_nonempty(safe_set: SafeSet):
    if safe_set.empty:
        raise EmptySafeSetError("no certified cell; execute the fallback memory instead")


def _map_from_targets(grid: GridPartition, safe: np.ndarray, target: np.ndarray) -> PiecewiseMap:
    transforms = []
    for k in range(grid.n_cells):
        if safe[k]:
            transforms.append(Identity())
        else:
            transforms.append(affine_between(grid.cell(k), grid.cell(int(target[k])), int(target[k])))
    return PiecewiseMap(grid, tuple(transforms))


def build_distance_map(grid: GridPartition, safe_set: SafeSet) -> PiecewiseMap:
    """Unsafe cells go to the safe cell with the nearest centre (ties: lowest index)."""
    _check_nonempty(safe_set)
    safe = safe_set.mask()
    safe_ids = np.flatnonzero(safe)
    wx = grid.bounds.x.width / grid.nx
    wy = grid.bounds.y.width / grid.ny
    ij = np.array([grid.ij(k) for k in range(grid.n_cells)])
    target = np.arange(grid.n_cells)
    for k in np.flatnonzero(~safe):
        # index offsets are integers, so equal distances compare exactly equal
        d2 = ((ij[safe_ids, 0] - ij[k, 0]) * wx) ** 2 + ((ij[safe_ids, 1] - ij[k, 1]) * wy) ** 2
        target[k] = safe_ids[int(np.argmin(d2))]
    return _map_from_targets(grid, safe, target)


def build_probability_map(grid: GridPartition, safe_set: SafeSet, presafe: "PreSafeGaussian",
                          rtol: float = 1e-9) -> PiecewiseMap:
    """Unsafe cells go to the safe cell with the most (centre-rule) pre-safe mass."""
    _check_nonempty(safe_set)
    safe = safe_set.mask()
    safe_ids = np.flatnonzero(safe)
    centers = grid.centers()[safe_ids]
    area = np.array([grid.cell(k).area for k in safe_ids])
    mass = np.exp(presafe.log_density(centers)) * area
    best = safe_ids[np.flatnonzero(mass >= mass.max() * (1 - rtol))[0]]
    target = np.where(safe, np.arange(grid.n_cells), best)
    return _map_from_targets(grid, safe, target)


def _in_box(box: Box2, grid: GridPartition, pts: np.ndarray) -> np.ndarray:
    """Half-open containment, closed where the box touches the grid's upper boundary."""
    gb = grid.bounds
    x, y = pts[:, 0], pts[:, 1]
    inx = (x >= box.x.lo) & ((x < box.x.hi) | ((box.x.hi == gb.x.hi) & (x == box.x.hi)))
    iny = (y >= box.y.lo) & ((y < box.y.hi) | ((box.y.hi == gb.y.hi) & (y == box.y.hi)))
    return inx & iny


def apply(pmap: PiecewiseMap, a_hat) -> np.ndarray:
    a = np.asarray(a_hat, dtype=float)
    k = pmap.grid.cell_of(a)
    tr = pmap.transforms[k]
    if isinstance(tr, Identity):
        return a.copy()
    out = tr.forward(a)
    # keep the image inside the target's half-open extent under rounding
    box, gb = tr.target_box, pmap.grid.bounds
    res = []
    for v, iv, g in ((out[0], box.x, gb.x), (out[1], box.y, gb.y)):
        v = min(max(v, iv.lo), iv.hi)
        if v == iv.hi and iv.hi != g.hi:
            v = np.nextafter(iv.hi, -np.inf)
        res.append(v)
    return np.array(res)


def apply_batch(pmap: PiecewiseMap, a_hat) -> np.ndarray:
    """Vectorized ``apply`` for an (N, 2) array; agrees with ``apply`` point by point."""
    pts = np.atleast_2d(np.asarray(a_hat, dtype=float))
    cells = pmap.grid.cells_of(pts)
    out = pts.copy()
    gb = pmap.grid.bounds
    for src, tr in enumerate(pmap.transforms):
        if isinstance(tr, Identity):
            continue
        hit = cells == src
        if not np.any(hit):
            continue
        img = tr.forward(pts[hit])
        for ax, iv, g in ((0, tr.target_box.x, gb.x), (1, tr.target_box.y, gb.y)):
            v = np.clip(img[:, ax], iv.lo, iv.hi)
            if iv.hi != g.hi:
                v = np.where(v == iv.hi, np.nextafter(iv.hi, -np.inf), v)
            img[:, ax] = v
        out[hit] = img
    return out


@dataclass(frozen=True)
class PreSafeGaussian:
    """Diagonal Gaussian in pre-squash space, squashed into the action box by sigmoids."""

    mean: tuple
    log_std: tuple
    action_box: Box2

    @classmethod
    def centered_on(cls, action, log_std, action_box: Box2) -> "PreSafeGaussian":
        """Gaussian whose squashed median is ``action`` (must be inside the open box)."""
        z = logit_box(np.asarray(action, dtype=float), action_box)
        return cls(tuple(float(v) for v in z), tuple(float(v) for v in np.broadcast_to(log_std, 2)), action_box)

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_std, dtype=float))

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.mu, np.asarray(self.log_std, dtype=float)])

    def with_theta(self, theta) -> "PreSafeGaussian":
        th = np.asarray(theta, dtype=float)
        return PreSafeGaussian((th[0], th[1]), (th[2], th[3]), self.action_box)

    def squash(self, z) -> np.ndarray:
        lo, hi = self.action_box.lo, self.action_box.hi
        return lo + (hi - lo) * expit(z)

    def log_density(self, a_hat) -> np.ndarray:
        """Log density of the squashed action; ``-inf`` on and outside the box boundary."""
        pts = np.atleast_2d(np.asarray(a_hat, dtype=float))
        lo, hi = self.action_box.lo, self.action_box.hi
        u = (pts - lo) / (hi - lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.log(u) - np.log1p(-u)
            r = (z - self.mu) / self.sigma
            lp = -0.5 * r * r - 0.5 * np.log(2 * np.pi) - np.log(self.sigma) - np.log(hi - lo) - np.log(u) - np.log1p(-u)
        lp = np.where((u > 0) & (u < 1), lp, -np.inf).sum(axis=1)
        return lp if np.ndim(a_hat) > 1 else lp[0]

    def cell_mass(self, box: Box2) -> float:
        """Exact pre-safe probability of a box, through the normal CDF in pre-squash space."""
        lo = logit_box(box.lo, self.action_box)
        hi = logit_box(box.hi, self.action_box)
        p = 1.0
        for i in range(2):
            a = (lo[i] - self.mu[i]) / self.sigma[i]
            b = (hi[i] - self.mu[i]) / self.sigma[i]
            # difference of CDFs computed stably in whichever tail is smaller
            if a > 0:
                p *= np.exp(log_ndtr(-a)) - np.exp(log_ndtr(-b))
            else:
                p *= np.exp(log_ndtr(b)) - np.exp(log_ndtr(a))
        return float(p)


def logit_box(a, box: Box2) -> np.ndarray:
    u = (np.asarray(a, dtype=float) - box.lo) / (box.hi - box.lo)
    with np.errstate(divide="ignore"):
        return np.log(u) - np.log1p(-u)


@dataclass(frozen=True)
class SafePolicy:
    presafe: PreSafeGaussian
    pmap: PiecewiseMap


def branches(policy: SafePolicy, a_tilde):
    """Pre-images and inverse-Jacobian factors of every cell map whose image holds ``a_tilde``."""
    pm = policy.pmap
    a = np.asarray(a_tilde, dtype=float)
    k = pm.grid.cell_of(a)
    out = []
    if isinstance(pm.transforms[k], Identity):
        out.append((a.copy(), 1.0, k))
        for src in pm.sources_by_target.get(k, ()):
            tr = pm.transforms[src]
            if _in_box(tr.target_box, pm.grid, a.reshape(1, 2))[0]:
                out.append((tr.inverse(a), tr.inv_jac_det, src))
    return out


def density(policy: SafePolicy, a_tilde) -> Union[float, np.ndarray]:
    """Closed-form density of the safe action at ``a_tilde`` (scalar point or (N, 2) array)."""
    pts = np.atleast_2d(np.asarray(a_tilde, dtype=float))
    pm = policy.pmap
    cells = pm.grid.cells_of(pts)
    safe = pm.safe_mask
    total = np.where(safe[cells], np.exp(policy.presafe.log_density(pts)), 0.0)
    for src, tr in enumerate(pm.transforms):
        if isinstance(tr, Identity):
            continue
        hit = (cells == tr.target_cell) & _in_box(tr.target_box, pm.grid, pts)
        if np.any(hit):
            pre = tr.inverse(pts[hit])
            total[hit] += tr.inv_jac_det * np.exp(policy.presafe.log_density(pre))
    return total if np.ndim(a_tilde) > 1 else float(total[0])


def log_density(policy: SafePolicy, a_tilde) -> float:
    terms = [np.log(j) + policy.presafe.log_density(x) for x, j, _ in branches(policy, a_tilde)]
    if not terms:
        return -np.inf
    return float(logsumexp(terms))


def sample(policy: SafePolicy, rng: Union[int, np.random.Generator]):
    """Draw a pre-safe action, push it through the layer; returns ``(a_tilde, log_density)``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ps = policy.presafe
    z = ps.mu + ps.sigma * rng.standard_normal(2)
    a_hat = np.clip(ps.squash(z), ps.action_box.lo, ps.action_box.hi)
    a_tilde = apply(policy.pmap, a_hat)
    return a_tilde, log_density(policy, a_tilde)


def sample_batch(policy: SafePolicy, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` safe actions (no densities), drawn like ``sample``."""
    ps = policy.presafe
    z = ps.mu + ps.sigma * rng.standard_normal((n, 2))
    a_hat = np.clip(ps.squash(z), ps.action_box.lo, ps.action_box.hi)
    return apply_batch(policy.pmap, a_hat)


def sample_presafe(presafe: PreSafeGaussian, rng: np.random.Generator) -> np.ndarray:
    z = presafe.mu + presafe.sigma * rng.standard_normal(2)
    return np.clip(presafe.squash(z), presafe.action_box.lo, presafe.action_box.hi)


def grad_log_density(policy: SafePolicy, a_tilde) -> np.ndarray:
    """Gradient of ``log density`` w.r.t. ``(mu_x, mu_y, log_std_x, log_std_y)``.

    Each branch contributes its Gaussian score in pre-squash space; squash and
    cell-map Jacobians do not depend on the parameters. Branch scores are
    averaged with weights proportional to the branch densities.
    """
    a = np.asarray(a_tilde, dtype=float)
    if policy.pmap.grid.on_boundary(a):
        raise BoundaryError(f"{a} lies on a cell boundary where the layer is discontinuous")
    br = branches(policy, a)
    if not br:
        raise OutOfDomainError(f"{a} has zero density")
    ps = policy.presafe
    logw = np.array([np.log(j) + ps.log_density(x) for x, j, _ in br])
    wts = np.exp(logw - logsumexp(logw))
    grad = np.zeros(4)
    for (x, _, _), wk in zip(br, wts):
        z = logit_box(x, ps.action_box)
        r = (z - ps.mu) / ps.sigma
        grad += wk * np.concatenate([r / ps.sigma, r * r - 1.0])
    return grad
