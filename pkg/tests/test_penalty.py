import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from threshold_aft import PenaltySpec, group_threshold, penalty_derivative, penalty_value, scalar_threshold
from threshold_aft.exceptions import NonconvexSubproblemError, PenaltyDomainError

KINDS = ["mcp", "scad"]


def _penalty_oracle(kind, lam, gamma, u):
    u = np.abs(u)
    if kind == "mcp":
        return np.where(u <= gamma * lam, lam * u - u**2 / (2 * gamma), gamma * lam**2 / 2)
    mid = (2 * gamma * lam * u - u**2 - lam**2) / (2 * (gamma - 1))
    return np.where(u <= lam, lam * u, np.where(u <= gamma * lam, mid, lam**2 * (gamma + 1) / 2))


def grid_minimizer(spec, v, a, half_width=6.0, num=400001):
    """Brute-force minimiser of a/2 (t - v)^2 + p(|t|) on a fine grid."""
    t = np.union1d(np.linspace(v - half_width, v + half_width, num), [0.0])
    obj = 0.5 * a * (t - v) ** 2 + _penalty_oracle(spec.kind.value, spec.lam, spec.gamma, t)
    return t[np.argmin(obj)]


class TestPenaltyValues:
    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_closed_form_oracle(self, kind):
        spec = PenaltySpec(kind, 0.9, 2.4)
        u = np.linspace(0, 4, 97)
        assert_allclose(penalty_value(spec, u), _penalty_oracle(kind, 0.9, 2.4, u), rtol=1e-14, atol=1e-15)

    def test_mcp_pieces(self):
        spec = PenaltySpec("mcp", 1.0, 3.0)
        assert_allclose(penalty_value(spec, [0.0, 1.0, 3.0, 10.0]), [0.0, 1 - 1 / 6, 1.5, 1.5])

    def test_scad_pieces(self):
        spec = PenaltySpec("scad", 1.0, 3.7)
        flat = (3.7 + 1) / 2
        assert_allclose(penalty_value(spec, [0.5, 1.0, 3.7, 9.0]), [0.5, 1.0, flat, flat])

    @pytest.mark.parametrize("kind", KINDS)
    def test_continuous_and_derivative_consistent(self, kind):
        spec = PenaltySpec(kind, 0.7, 2.4)
        u = np.linspace(0.0, 3.0, 3001)
        v = penalty_value(spec, u)
        assert np.all(np.diff(v) >= -1e-15)
        num = np.diff(v) / np.diff(u)
        mid = penalty_derivative(spec, u[:-1])
        assert_allclose(num, mid, atol=2e-3)

    @pytest.mark.parametrize("kind", KINDS)
    def test_derivative_endpoints(self, kind):
        spec = PenaltySpec(kind, 0.5, 2.4)
        assert penalty_derivative(spec, 0.0) == 0.5
        assert penalty_derivative(spec, 2.4 * 0.5 + 1e-9) == 0.0

    def test_negative_argument(self):
        with pytest.raises(PenaltyDomainError):
            penalty_value(PenaltySpec("mcp", 1.0), -0.1)

    @pytest.mark.parametrize("kind,gamma", [("mcp", 2.0), ("mcp", 1.5), ("scad", 1.0), ("scad", 0.5)])
    def test_gamma_domain(self, kind, gamma):
        with pytest.raises(PenaltyDomainError):
            PenaltySpec(kind, 1.0, gamma)

    def test_negative_lambda(self):
        with pytest.raises(PenaltyDomainError):
            PenaltySpec("scad", -1.0)


class TestScalarThreshold:
    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_grid_search(self, kind, rng):
        for _ in range(40):
            spec = PenaltySpec(kind, float(rng.uniform(0.1, 2.0)), 2.4)
            a = float(rng.uniform(spec.convexity_bound * 1.2, 3.0))
            v = float(rng.uniform(-3 * spec.gamma * spec.lam, 3 * spec.gamma * spec.lam))
            assert_allclose(scalar_threshold(spec, v, a), grid_minimizer(spec, v, a), atol=5e-5)

    def test_mcp_firm_threshold_unit_curvature(self):
        spec = PenaltySpec("mcp", 1.0, 3.0)
        assert scalar_threshold(spec, 0.9) == 0.0
        assert_allclose(scalar_threshold(spec, 2.0), (2.0 - 1.0) / (1 - 1 / 3))
        assert scalar_threshold(spec, -3.5) == -3.5

    def test_scad_three_pieces_unit_curvature(self):
        spec = PenaltySpec("scad", 1.0, 3.7)
        assert_allclose(scalar_threshold(spec, 1.5), 0.5)
        assert_allclose(scalar_threshold(spec, 3.0), (2.7 * 3.0 - 3.7) / 1.7)
        assert scalar_threshold(spec, 4.0) == 4.0

    @pytest.mark.parametrize("kind", KINDS)
    def test_curvature_below_bound(self, kind):
        spec = PenaltySpec(kind, 1.0, 2.4)
        with pytest.raises(NonconvexSubproblemError):
            scalar_threshold(spec, 1.0, a=spec.convexity_bound)

    @settings(max_examples=300, deadline=None)
    @given(kind=st.sampled_from(KINDS), lam=st.floats(0.01, 5.0), v=st.floats(-50, 50),
           a=st.floats(1.0, 10.0))
    def test_zero_band_and_identity_region(self, kind, lam, v, a):
        spec = PenaltySpec(kind, lam, 2.4)
        t = scalar_threshold(spec, v, a)
        assert (t == 0.0) == (abs(v) <= lam / a)
        if abs(v) > spec.gamma * lam:
            assert t == v
        assert t * v >= 0
        assert abs(t) <= abs(v) + 1e-12 or abs(v) <= spec.gamma * lam

    @settings(max_examples=200, deadline=None)
    @given(kind=st.sampled_from(KINDS), lam=st.floats(0.05, 3.0),
           v1=st.floats(-20, 20), v2=st.floats(-20, 20))
    def test_monotone_in_input(self, kind, lam, v1, v2):
        spec = PenaltySpec(kind, lam, 2.4)
        lo, hi = sorted((v1, v2))
        assert scalar_threshold(spec, lo) <= scalar_threshold(spec, hi) + 1e-12


class TestGroupThreshold:
    @pytest.mark.parametrize("kind", KINDS)
    def test_radial_rescaling(self, kind, rng):
        spec = PenaltySpec(kind, 0.8, 2.4)
        for _ in range(20):
            v = rng.standard_normal(4) * 2
            out = group_threshold(spec, v, 1.3)
            norm = np.linalg.norm(v)
            assert_allclose(np.linalg.norm(out), abs(scalar_threshold(spec, norm, 1.3)), atol=1e-12)
            if np.linalg.norm(out) > 0:
                assert_allclose(out / np.linalg.norm(out), v / norm, atol=1e-12)

    def test_zero_vector(self):
        assert np.all(group_threshold(PenaltySpec("mcp", 1.0), np.zeros(3)) == 0.0)

    def test_whole_group_zeroed(self):
        out = group_threshold(PenaltySpec("scad", 1.0), [0.3, -0.4])
        assert np.all(out == 0.0)
