import numpy as np
import pytest
from hypothesis import given, strategies as st

from failsafe_imitation.diagnostics import (
    cell_masses,
    exact_cell_masses,
    gradient_error,
    random_policy,
    sampling_agreement,
)
from failsafe_imitation.geometry import Box2, GridPartition, OutOfDomainError, default_action_box
from failsafe_imitation.safe_set import SafeSet
from failsafe_imitation.safety_layer import (
    Affine,
    BoundaryError,
    EmptySafeSetError,
    Identity,
    PreSafeGaussian,
    SafePolicy,
    affine_between,
    apply,
    apply_batch,
    branches,
    build_distance_map,
    build_probability_map,
    density,
    grad_log_density,
    log_density,
    sample,
)

BOX = default_action_box()


def safe_set(grid, cells):
    cells = tuple(sorted(cells))
    return SafeSet(grid, cells, {k: (-1.0,) for k in cells}, "synthetic")


def unit_grid(n=2):
    return GridPartition(Box2.from_bounds(0, 1, 0, 1), n, n)


class TestDistanceMap:
    def test_all_safe_is_identity(self):
        g = unit_grid(3)
        pm = build_distance_map(g, safe_set(g, range(9)))
        assert all(isinstance(t, Identity) for t in pm.transforms)

    def test_single_unsafe_translates_one_pitch(self):
        g = GridPartition(Box2.from_bounds(0, 3, 0, 1), 3, 1)
        pm = build_distance_map(g, safe_set(g, [0, 2]))
        tr = pm.transforms[1]
        assert isinstance(tr, Affine) and tr.target_cell == 0
        assert tr.inv_jac_det == pytest.approx(1.0)
        np.testing.assert_allclose(tr.forward(np.array([1.5, 0.5])), [0.5, 0.5])

    def test_tie_goes_to_lower_index(self):
        g = GridPartition(Box2.from_bounds(0, 3, 0, 1), 3, 1)
        pm = build_distance_map(g, safe_set(g, [0, 2]))
        assert pm.transforms[1].target_cell == 0

    def test_nearest_center(self):
        g = GridPartition(Box2.from_bounds(0, 4, 0, 1), 4, 1)
        pm = build_distance_map(g, safe_set(g, [3]))
        assert [t.target_cell for t in pm.transforms[:3]] == [3, 3, 3]

    def test_empty_safe_set_rejected(self):
        g = unit_grid()
        with pytest.raises(EmptySafeSetError):
            build_distance_map(g, safe_set(g, []))


class TestProbabilityMap:
    def test_targets_cell_holding_the_mean(self):
        g = GridPartition(BOX, 4, 4)
        ps = PreSafeGaussian.centered_on((1.0, 0.5), (-1.0, -1.0), BOX)
        safe = [0, 5, g.cell_of((1.0, 0.5)), 15]
        pm = build_probability_map(g, safe_set(g, safe), ps)
        for k, tr in enumerate(pm.transforms):
            if k not in safe:
                assert tr.target_cell == g.cell_of((1.0, 0.5))

    def test_flat_presafe_ties_to_lowest_index(self):
        g = GridPartition(BOX, 4, 4)
        ps = PreSafeGaussian((0.0, 0.0), (6.0, 6.0), BOX)
        # symmetric pair around the box centre: equal centre densities
        pm = build_probability_map(g, safe_set(g, [5, 10]), ps)
        assert {tr.target_cell for tr in pm.transforms if isinstance(tr, Affine)} == {5}

    def test_all_safe_identity(self):
        g = unit_grid()
        ps = PreSafeGaussian((0, 0), (0, 0), g.bounds)
        pm = build_probability_map(g, safe_set(g, range(4)), ps)
        assert pm.safe_mask.all()


class TestApply:
    def setup_method(self):
        self.g = GridPartition(Box2.from_bounds(0, 3, 0, 1), 3, 1)
        self.pm = build_distance_map(self.g, safe_set(self.g, [0, 2]))

    def test_identity_branch(self):
        np.testing.assert_array_equal(apply(self.pm, (2.3, 0.4)), [2.3, 0.4])

    def test_unsafe_center_goes_to_target_center(self):
        np.testing.assert_allclose(apply(self.pm, (1.5, 0.5)), [0.5, 0.5])

    def test_boundary_uses_half_open_cells(self):
        # x = 1 belongs to the unsafe middle cell; its image is the left edge of cell 0
        out = apply(self.pm, (1.0, 0.5))
        assert out[0] == pytest.approx(0.0) and self.g.cell_of(out) == 0
        # the image of the cell's upper edge stays inside cell 0
        out = apply(self.pm, (np.nextafter(2.0, 0), 0.5))
        assert self.g.cell_of(out) == 0

    def test_out_of_box(self):
        with pytest.raises(OutOfDomainError):
            apply(self.pm, (3.5, 0.5))

    def test_batch_matches_scalar(self, rng):
        g = GridPartition(BOX, 7, 5)
        cells = rng.choice(g.n_cells, 6, replace=False)
        pm = build_distance_map(g, safe_set(g, cells.tolist()))
        pts = rng.uniform(BOX.lo, BOX.hi, (400, 2))
        pts = np.vstack([pts, g.vertices()])
        batch = apply_batch(pm, pts)
        for p, b in zip(pts, batch):
            np.testing.assert_array_equal(apply(pm, p), b)
        assert pm.safe_mask[g.cells_of(batch)].all()


def test_affine_scale_factor():
    tr = affine_between(Box2.from_bounds(0, 0.2, 0, 0.2), Box2.from_bounds(1, 1.1, 1, 1.1), 0)
    assert tr.inv_jac_det == pytest.approx(4.0)


class TestDensity:
    def test_all_safe_equals_squashed_gaussian(self, rng):
        g = GridPartition(BOX, 5, 5)
        ps = PreSafeGaussian((0.3, -0.7), (0.2, -0.4), BOX)
        pol = SafePolicy(ps, build_distance_map(g, safe_set(g, range(25))))
        pts = rng.uniform(BOX.lo, BOX.hi, (50, 2))
        np.testing.assert_array_equal(density(pol, pts), np.exp(ps.log_density(pts)))

    def test_two_sources_translated_onto_one_cell(self):
        g = GridPartition(Box2.from_bounds(-3, 3, -1, 1), 3, 1)
        ps = PreSafeGaussian((0.2, 0.0), (0.0, 0.0), g.bounds)
        pol = SafePolicy(ps, build_distance_map(g, safe_set(g, [1])))
        a = np.array([0.4, 0.3])
        expect = sum(np.exp(ps.log_density(p)) for p in (a, a - (2, 0), a + (2, 0)))
        assert density(pol, a) == pytest.approx(expect, rel=1e-13)
        assert len(branches(pol, a)) == 3

    def test_histogram_agreement_two_sources(self):
        g = GridPartition(Box2.from_bounds(-3, 3, -1, 1), 3, 1)
        ps = PreSafeGaussian((0.2, 0.0), (0.0, 0.0), g.bounds)
        pol = SafePolicy(ps, build_distance_map(g, safe_set(g, [1])))
        res = sampling_agreement(pol, np.random.default_rng(1), 100_000)
        assert res["pass"] and res["unsafeHits"] == 0

    def test_support(self, rng):
        g = GridPartition(BOX, 6, 6)
        ss = safe_set(g, [3, 20, 33])
        ps = PreSafeGaussian((0.0, 0.0), (0.0, 0.0), BOX)
        pm = build_probability_map(g, ss, ps)
        pol = SafePolicy(ps, pm)
        for k in range(g.n_cells):
            pts = rng.uniform(g.cell(k).lo, g.cell(k).hi, (20, 2))
            vals = density(pol, pts)
            if k in ss.safe_cells:
                assert (vals > 0).all()
            else:
                assert (vals == 0).all()

    @given(st.integers(0, 2**32 - 1))
    def test_additivity_over_branches(self, seed):
        rng = np.random.default_rng(seed)
        pol = random_policy(rng, GridPartition(BOX, 5, 4), "distance")
        pts = rng.uniform(BOX.lo, BOX.hi, (30, 2))
        full = density(pol, pts)
        ps, pm = pol.presafe, pol.pmap
        for a, f in zip(pts, full):
            k = pm.grid.cell_of(a)
            parts = []
            for src, tr in enumerate(pm.transforms):
                if isinstance(tr, Identity) and src == k:
                    parts.append(np.exp(ps.log_density(a)))
                elif isinstance(tr, Affine) and tr.target_cell == k:
                    parts.append(tr.inv_jac_det * np.exp(ps.log_density(tr.inverse(a))))
            assert f == pytest.approx(sum(parts), rel=1e-12, abs=1e-300)
            assert log_density(pol, a) == (pytest.approx(np.log(f), rel=1e-12) if f > 0 else -np.inf)

    @pytest.mark.parametrize("layer", ["distance", "probability"])
    def test_normalization(self, layer, rng):
        for _ in range(3):
            pol = random_policy(rng, GridPartition(BOX, 10, 10), layer)
            m = cell_masses(pol)
            assert m.sum() == pytest.approx(1.0, abs=1e-9)
            np.testing.assert_allclose(m, exact_cell_masses(pol), atol=1e-9)


class TestSample:
    def test_reproducible(self):
        pol = random_policy(np.random.default_rng(0), GridPartition(BOX, 10, 10))
        a1, l1 = sample(pol, 42)
        a2, l2 = sample(pol, np.random.default_rng(42))
        assert np.array_equal(a1, a2) and l1 == l2

    def test_lands_in_safe_cells_with_density(self, rng):
        pol = random_policy(rng, GridPartition(BOX, 10, 10))
        for s in range(200):
            a, lp = sample(pol, s)
            assert pol.pmap.safe_mask[pol.pmap.grid.cell_of(a)]
            assert lp == pytest.approx(np.log(density(pol, a)), rel=1e-12)


class TestGradient:
    def test_zero_mean_score_at_median(self):
        g = GridPartition(BOX, 4, 4)
        ps = PreSafeGaussian((0.31, -0.42), (0.1, 0.2), BOX)
        pol = SafePolicy(ps, build_distance_map(g, safe_set(g, range(16))))
        grad = grad_log_density(pol, ps.squash(ps.mu))
        np.testing.assert_allclose(grad[:2], 0.0, atol=1e-12)
        np.testing.assert_allclose(grad[2:], -1.0, atol=1e-12)

    def test_single_branch_is_gaussian_score(self):
        g = GridPartition(BOX, 4, 4)
        ps = PreSafeGaussian((0.31, -0.42), (0.1, 0.2), BOX)
        pol = SafePolicy(ps, build_distance_map(g, safe_set(g, range(16))))
        a = np.array([1.3, -0.6])
        z = np.log((a - BOX.lo) / (BOX.hi - a))
        r = (z - ps.mu) / ps.sigma
        np.testing.assert_allclose(grad_log_density(pol, a), np.concatenate([r / ps.sigma, r * r - 1]), rtol=1e-12)

    def test_multi_branch_matches_finite_differences(self, rng):
        for layer in ("distance", "probability"):
            pol = random_policy(rng, GridPartition(BOX, 10, 10), layer)
            for _ in range(10):
                a, _ = sample(pol, rng)
                if not pol.pmap.grid.on_boundary(a):
                    assert gradient_error(pol, a) <= 1e-5

    def test_boundary_error(self):
        g = GridPartition(BOX, 4, 4)
        pol = SafePolicy(PreSafeGaussian((0, 0), (0, 0), BOX), build_distance_map(g, safe_set(g, range(16))))
        with pytest.raises(BoundaryError):
            grad_log_density(pol, g.vertices()[6])
