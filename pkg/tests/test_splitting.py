import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import noiseless_threshold_data, random_dataset
from threshold_aft import (PenaltySpec, SurvivalDataset, build_group_design, build_segments,
                           extract_candidates, group_coordinate_descent, stute_wls)
from threshold_aft.censored import order_subset
from threshold_aft.exceptions import InsufficientEventsError
from threshold_aft.splitting import BlockProblem, candidate_groups, lambda_grid, solve_path


def _problem(data, m):
    seg = build_segments(data, m)
    design = build_group_design(data, seg)
    return seg, design, BlockProblem(design.y, design.X, data.p, starts=design.starts)


class TestBuildSegments:
    def test_all_events_counts(self):
        data = SurvivalDataset(np.arange(10.0), np.ones(10), np.ones((10, 1)), np.arange(10.0))
        seg = build_segments(data, 3)
        assert seg.q == 2
        assert_array_equal(seg.event_counts, [4, 3, 3])
        assert_array_equal(seg.boundaries, [3.0, 6.0])

    def test_too_few_events(self):
        data = SurvivalDataset(np.arange(6.0), [1, 1, 1, 0, 0, 0], np.ones((6, 1)), np.arange(6.0))
        with pytest.raises(InsufficientEventsError):
            build_segments(data, 3)
        with pytest.raises(ValueError):
            build_segments(data, 0)

    def test_membership_against_boundaries(self, rng):
        for _ in range(20):
            data = random_dataset(rng, int(rng.integers(30, 120)), censor_rate=0.4)
            m = int(rng.integers(2, data.n_events // 2 + 1))
            seg = build_segments(data, m)
            edges = np.concatenate([[-np.inf], seg.boundaries, [np.inf]])
            covered = np.concatenate(seg.index_sets)
            assert_array_equal(np.sort(covered), np.arange(data.n))
            for j, idx in enumerate(seg.index_sets):
                assert np.all((data.z[idx] > edges[j]) & (data.z[idx] <= edges[j + 1]))
            q = data.n_events // m - 1
            assert seg.q == q
            assert seg.event_counts[0] == data.n_events - q * m
            assert np.all(seg.event_counts[1:] == m)
            ez = np.sort(data.z[data.delta == 1])
            # upper edge of segment i is the event z of rank n* - (q - i + 1) m
            ranks = data.n_events - (q - np.arange(1, q + 1) + 1) * m
            assert_array_equal(seg.boundaries, ez[ranks - 1])

    def test_event_order_stat_edges(self, rng):
        data = random_dataset(rng, 40)
        seg = build_segments(data, 5)
        assert seg.event_order_stat(0) == -np.inf
        assert seg.event_order_stat(data.n_events + 1) == np.inf
        assert seg.event_order_stat(1) == np.sort(data.z[data.delta == 1])[0]


class TestGroupDesign:
    def test_structure_and_scaling(self, rng):
        data = random_dataset(rng, 60, p=3, censor_rate=0.3)
        seg, design, _ = _problem(data, 8)
        p = data.p
        row_seg = np.repeat(np.arange(seg.q + 1), [s.size for s in seg.index_sets])
        for j in range(seg.q + 1):
            block = design.X[:, j * p:(j + 1) * p]
            assert np.all(block[row_seg < j] == 0.0)
        for j, idx in enumerate(seg.index_sets):
            km = order_subset(data, idx)
            w = dict(zip(km.order.tolist(), km.w.tolist()))
            rows = np.flatnonzero(row_seg == j)
            for r in rows:
                i = design.rows[r]
                scale = np.sqrt(idx.size * w[i])
                assert_allclose(design.y[r], scale * data.y[i], rtol=1e-14, atol=1e-15)
                assert_allclose(design.X[r, j * p:(j + 1) * p], scale * data.X[i], rtol=1e-14, atol=1e-15)

    def test_unpacks_as_pair(self, rng):
        data = random_dataset(rng, 40)
        y_t, X_t = build_group_design(data, build_segments(data, 6))
        assert X_t.shape[0] == y_t.shape[0] == data.n

    def test_restricted_least_squares_recovers_jump(self):
        # jump placed exactly at a segment boundary, all events, no noise
        rng = np.random.default_rng(5)
        n = 60
        z = np.sort(rng.uniform(-1, 1, n))
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        beta1, d = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
        seg0 = build_segments(SurvivalDataset(np.zeros(n), np.ones(n), X, z), 10)
        jump = seg0.boundaries[2]
        y = X @ beta1 + (z > jump) * (X @ d)
        data = SurvivalDataset(y, np.ones(n), X, z)
        seg = build_segments(data, 10)
        y_t, X_t = build_group_design(data, seg)
        cols = np.r_[0:2, 6:8]  # groups 1 and 4 (1-based): the jump follows segment 3
        sol = np.linalg.lstsq(X_t[:, cols], y_t, rcond=None)[0]
        assert_allclose(sol, np.r_[beta1, d], atol=1e-8)


class TestGroupCoordinateDescent:
    @pytest.mark.parametrize("kind", ["mcp", "scad"])
    def test_traces_and_kkt(self, kind, rng):
        for _ in range(15):
            data = random_dataset(rng, 80, p=3, censor_rate=0.3)
            _, design, prob = _problem(data, 10)
            lam = float(rng.uniform(0.05, 0.8)) * prob.lambda_max()
            sol = group_coordinate_descent(design.y, design.X, PenaltySpec(kind, lam), 3,
                                           starts=design.starts)
            assert sol.converged
            assert np.all(np.diff(sol.objective_trace) <= 1e-12)
            assert sol.kkt_max <= lam * (1 + 1e-4)

    def test_lambda_zero_is_least_squares(self, rng):
        data = random_dataset(rng, 90, p=2, censor_rate=0.2)
        _, design, _ = _problem(data, 25)
        sol = group_coordinate_descent(design.y, design.X, PenaltySpec("mcp", 0.0), 2,
                                       tol=1e-10, max_iter=20000, starts=design.starts)
        ls = np.linalg.lstsq(design.X, design.y, rcond=None)[0]
        assert_allclose(sol.theta, ls, atol=1e-6)

    def test_large_lambda_gives_null_fit(self, rng):
        data = random_dataset(rng, 80, p=3)
        _, design, prob = _problem(data, 10)
        sol = group_coordinate_descent(design.y, design.X, PenaltySpec("scad", prob.lambda_max() * 1.01),
                                       3, starts=design.starts)
        assert sol.active == (1,)
        assert_allclose(sol.theta, prob.null_theta(), atol=1e-12)
        assert extract_candidates(sol) == (0, ())

    def test_null_fit_equals_stute_without_censoring(self, rng):
        data = random_dataset(rng, 70, p=3, censor_rate=0.0)
        _, design, prob = _problem(data, 10)
        assert_allclose(prob.null_theta()[:3], stute_wls(data).beta, atol=1e-10)

    def test_below_lambda_max_activates(self, rng):
        data = random_dataset(rng, 80, p=3)
        _, design, prob = _problem(data, 10)
        sol = group_coordinate_descent(design.y, design.X, PenaltySpec("mcp", prob.lambda_max() * 0.9),
                                       3, starts=design.starts)
        assert len(sol.active) > 1

    def test_noiseless_jump_at_boundary(self):
        rng = np.random.default_rng(11)
        n = 200
        z = rng.uniform(-1, 1, n)
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        probe = build_segments(SurvivalDataset(np.zeros(n), np.ones(n), X, z), 20)
        jump = probe.boundaries[4]
        y = X @ [1.0, 1.0] + (z > jump) * (X @ [2.0, -1.0])
        data = SurvivalDataset(y, np.ones(n), X, z)
        _, design, prob = _problem(data, 20)
        sol = group_coordinate_descent(design.y, design.X, PenaltySpec("mcp", 0.1 * prob.lambda_max()),
                                       2, starts=design.starts)
        assert sol.candidates == (6,)

    def test_permutation_within_segment(self, rng):
        data = random_dataset(rng, 70, p=2)
        perm = rng.permutation(data.n)
        shuffled = data.take(perm)
        spec = PenaltySpec("mcp", 0.05)
        a = group_coordinate_descent(*build_group_design(data, build_segments(data, 9)), spec, 2)
        b = group_coordinate_descent(*build_group_design(shuffled, build_segments(shuffled, 9)), spec, 2)
        assert_allclose(a.theta, b.theta, atol=1e-9)

    def test_flat_region_refit(self, rng):
        data, _ = noiseless_threshold_data(n=200, censor=False, seed=4)
        _, design, prob = _problem(data, 14)
        spec = PenaltySpec("mcp", 0.02 * prob.lambda_max())
        sol = group_coordinate_descent(design.y, design.X, spec, 3, starts=design.starts)
        groups = sol.groups
        act = [j - 1 for j in sol.active]
        if all(np.linalg.norm(groups[j]) > spec.gamma * spec.lam for j in act[1:]):
            cols = np.concatenate([np.arange(3 * j, 3 * j + 3) for j in act])
            ref = np.linalg.lstsq(design.X[:, cols], design.y, rcond=None)[0]
            assert_allclose(sol.theta[cols], ref, atol=1e-8)
        else:
            pytest.skip("some active group sits in the penalty's concave region")


class TestCandidates:
    @pytest.mark.parametrize("active,expected", [
        ((1,), ()),
        ((1, 4, 5), (4,)),
        ((1, 3, 7, 8), (3, 7)),
        ((2, 3), (2,)),
        ((), ()),
    ])
    def test_rule(self, active, expected):
        assert extract_candidates(active) == (len(expected), expected)

    @settings(max_examples=200, deadline=None)
    @given(st.sets(st.integers(1, 30)))
    def test_property(self, active):
        cand = candidate_groups(active)
        assert all(j in active and j >= 2 and j - 1 not in active for j in cand)
        assert list(cand) == sorted(cand)
        runs = sum(1 for j in active if j >= 2 and j - 1 not in active)
        assert len(cand) == runs


class TestPath:
    def test_grid_shape(self):
        g = lambda_grid(2.0, 50, 0.01)
        assert g.size == 50
        assert_allclose([g[0], g[-1]], [2.0, 0.02])
        assert np.all(np.diff(g) < 0)
        assert_array_equal(lambda_grid(3.0, 1), [3.0])

    def test_warm_started_path(self, rng):
        data = random_dataset(rng, 80, p=3)
        _, _, prob = _problem(data, 10)
        sols = solve_path(prob, PenaltySpec("mcp", 0.0), lambda_grid(prob.lambda_max(), 10, 0.05))
        assert sols[0].active == (1,)
        assert all(s.converged for s in sols)
        assert all(s.kkt_max <= s.lam * (1 + 1e-4) for s in sols)
