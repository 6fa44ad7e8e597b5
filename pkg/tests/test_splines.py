"""Spline basis, edge evaluation, and least-squares fitting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkan.errors import ConfigError, DomainError
from pkan.splines import (
    KnotGrid,
    SplineEdge,
    basis_eval,
    design_and_derivative,
    design_matrix,
    edge_eval,
    edge_eval_grid,
    fit_spline,
    uniform_grid_points,
)

# ---------------------------------------------------------------------------
# independent oracle: the classic local span/basis algorithm
# (Piegl & Tiller "BasisFuns"), coded separately from the production path


def _find_span(t, p, x):
    K = len(t) - p - 1
    if x >= t[K]:
        return K - 1
    if x <= t[p]:
        return p
    low, high = p, K
    mid = (low + high) // 2
    while not (t[mid] <= x < t[mid + 1]):
        if x < t[mid]:
            high = mid
        else:
            low = mid
        mid = (low + high) // 2
    return mid


def _basis_funs(t, p, s, x):
    N = np.zeros(p + 1)
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - t[s + 1 - j]
        right[j] = t[s + j] - x
        saved = 0.0
        for r in range(j):
            denom = right[r + 1] + left[j - r]
            temp = 0.0 if denom == 0.0 else N[r] / denom
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return N


def oracle_basis(grid: KnotGrid, x: float) -> np.ndarray:
    t = grid.knots
    p = grid.degree
    s = _find_span(t, p, x)
    vals = _basis_funs(t, p, s, x)
    out = np.zeros(grid.basis_count)
    out[s - p : s + 1] = vals
    return out


def oracle_eval(edge: SplineEdge, x: float) -> float:
    return float(oracle_basis(edge.grid, x) @ edge.coefficients)


# ---------------------------------------------------------------------------


class TestKnotGrid:
    def test_clamped_knot_vector(self):
        grid = KnotGrid(degree=3, intervals=4, domain=(0.0, 1.0))
        t = grid.knots
        assert np.all(np.diff(t) >= 0)
        assert np.all(t[:4] == 0.0) and np.all(t[-4:] == 1.0)
        assert len(t) == grid.basis_count + grid.degree + 1

    def test_default_edge_has_23_coefficients(self):
        assert KnotGrid().basis_count == 23

    def test_invalid_domain(self):
        with pytest.raises(ConfigError):
            KnotGrid(domain=(1.0, 1.0))

    def test_invalid_degree(self):
        with pytest.raises(ConfigError):
            KnotGrid(degree=0)


class TestBasisEval:
    def test_linear_hat_functions(self):
        grid = KnotGrid(degree=1, intervals=1, domain=(0.0, 1.0))
        np.testing.assert_allclose(basis_eval(grid, 0.25), [0.75, 0.25], atol=1e-15)

    def test_cubic_matches_local_oracle(self):
        # eight uniform interior knots on [0, 1] -> nine spans
        grid = KnotGrid(degree=3, intervals=9, domain=(0.0, 1.0))
        np.testing.assert_allclose(
            basis_eval(grid, 0.37), oracle_basis(grid, 0.37), atol=1e-12
        )

    @settings(max_examples=200, deadline=None)
    @given(
        degree=st.integers(1, 5),
        intervals=st.integers(1, 12),
        frac=st.floats(0.0, 1.0),
    )
    def test_partition_of_unity(self, degree, intervals, frac):
        grid = KnotGrid(degree=degree, intervals=intervals, domain=(-1.0, 1.0))
        x = -1.0 + 2.0 * frac
        vals = basis_eval(grid, x)
        assert np.all(vals >= -1e-15)
        assert abs(vals.sum() - 1.0) < 1e-12

    def test_random_points_match_oracle(self):
        rng = np.random.default_rng(7)
        grid = KnotGrid(degree=3, intervals=10, domain=(-1.0, 1.0))
        for x in rng.uniform(-1, 1, 50):
            np.testing.assert_allclose(
                basis_eval(grid, x), oracle_basis(grid, float(x)), atol=1e-12
            )

    def test_local_support(self):
        # basis i vanishes outside its k+2-knot span [t_i, t_{i+k+1}]
        grid = KnotGrid(degree=3, intervals=8, domain=(0.0, 1.0))
        t = grid.knots
        k = grid.degree
        xs = np.linspace(0, 1, 400)
        B = design_matrix(grid, xs)
        for i in range(grid.basis_count):
            outside = (xs < t[i] - 1e-12) | (xs > t[i + k + 1] + 1e-12)
            assert np.all(np.abs(B[outside, i]) == 0.0)

    def test_endpoints(self):
        grid = KnotGrid(degree=3, intervals=5, domain=(0.0, 1.0))
        left = basis_eval(grid, 0.0)
        right = basis_eval(grid, 1.0)
        assert left[0] == pytest.approx(1.0)
        assert right[-1] == pytest.approx(1.0)

    def test_tolerance_clamp_and_domain_error(self):
        grid = KnotGrid(degree=2, intervals=3, domain=(0.0, 1.0))
        np.testing.assert_allclose(basis_eval(grid, 1.0 + 5e-13), basis_eval(grid, 1.0))
        with pytest.raises(DomainError, match="outside"):
            basis_eval(grid, 1.001)

    def test_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        grid = KnotGrid(degree=3, intervals=7, domain=(-1.0, 1.0))
        xs = rng.uniform(-0.95, 0.95, 20)
        _, dB = design_and_derivative(grid, xs)
        h = 1e-6
        fd = (design_matrix(grid, xs + h) - design_matrix(grid, xs - h)) / (2 * h)
        np.testing.assert_allclose(dB, fd, atol=1e-6)


class TestEdgeEval:
    def test_constant_coefficients(self):
        grid = KnotGrid(degree=3, intervals=6, domain=(0.0, 1.0))
        edge = SplineEdge(grid, np.full(grid.basis_count, 2.0))
        assert edge_eval(edge, 0.5) == pytest.approx(2.0, abs=1e-14)

    def test_linear_interpolation(self):
        grid = KnotGrid(degree=1, intervals=1, domain=(0.0, 1.0))
        edge = SplineEdge(grid, np.array([0.0, 1.0]))
        assert edge_eval(edge, 0.25) == pytest.approx(0.25, abs=1e-15)

    def test_random_points_match_oracle(self):
        rng = np.random.default_rng(11)
        grid = KnotGrid(degree=3, intervals=10, domain=(-1.0, 1.0))
        edge = SplineEdge(grid, rng.normal(0, 1, grid.basis_count))
        for x in rng.uniform(-1, 1, 100):
            assert edge_eval(edge, float(x)) == pytest.approx(
                oracle_eval(edge, float(x)), abs=1e-12
            )

    def test_coefficient_gradient_is_basis_vector(self):
        # d edge(x) / d c_i equals basis_i(x); check by central differences
        rng = np.random.default_rng(5)
        grid = KnotGrid(degree=3, intervals=5, domain=(-1.0, 1.0))
        coeffs = rng.normal(0, 1, grid.basis_count)
        x = 0.3
        basis = basis_eval(grid, x)
        h = 1e-6
        for i in range(grid.basis_count):
            cp, cm = coeffs.copy(), coeffs.copy()
            cp[i] += h
            cm[i] -= h
            fd = (edge_eval(SplineEdge(grid, cp), x) - edge_eval(SplineEdge(grid, cm), x)) / (2 * h)
            denom = max(abs(basis[i]), 1e-12)
            assert abs(fd - basis[i]) / denom < 1e-6 or abs(fd - basis[i]) < 1e-9


class TestEdgeEvalGrid:
    def test_constant_edge(self):
        grid = KnotGrid(degree=3, intervals=5, domain=(-1.0, 1.0))
        edge = SplineEdge(grid, np.full(grid.basis_count, 3.5))
        np.testing.assert_allclose(edge_eval_grid(edge, 16), np.full(16, 3.5), atol=1e-13)

    def test_identity_linear_edge(self):
        grid = KnotGrid(degree=1, intervals=4, domain=(0.0, 1.0))
        breakpoints = np.linspace(0, 1, 5)
        edge = SplineEdge(grid, breakpoints)  # hat coefficients = values at breakpoints
        np.testing.assert_allclose(edge_eval_grid(edge, 8), np.arange(8) / 8, atol=1e-12)

    def test_matches_pointwise_eval(self):
        rng = np.random.default_rng(2)
        grid = KnotGrid(degree=3, intervals=20, domain=(-1.0, 1.0))
        edge = SplineEdge(grid, rng.normal(0, 1, grid.basis_count))
        values = edge_eval_grid(edge, 64)
        pts = uniform_grid_points(grid, 64)
        expected = [edge_eval(edge, float(x)) for x in pts]
        np.testing.assert_allclose(values, expected, atol=1e-12)

    @pytest.mark.parametrize("n", [4, 7, 48, 0])
    def test_rejects_bad_grid_sizes(self, n):
        grid = KnotGrid()
        edge = SplineEdge(grid, np.zeros(grid.basis_count))
        with pytest.raises(ConfigError):
            edge_eval_grid(edge, n)


class TestFitSpline:
    def test_line_is_reproduced(self):
        rng = np.random.default_rng(0)
        grid = KnotGrid(degree=1, intervals=4, domain=(0.0, 1.0))
        x = rng.uniform(0, 1, 40)
        samples = np.column_stack([x, 2.0 * x])
        edge = fit_spline(samples, grid)
        resid = max(abs(edge_eval(edge, float(v)) - 2.0 * v) for v in x)
        assert resid < 1e-10

    def test_interpolation_matches_direct_solve(self):
        rng = np.random.default_rng(1)
        grid = KnotGrid(degree=2, intervals=3, domain=(0.0, 1.0))  # 5 basis functions
        x = np.array([0.05, 0.3, 0.5, 0.7, 0.95])
        y = rng.normal(0, 1, 5)
        edge = fit_spline(np.column_stack([x, y]), grid, ridge=0.0)
        B = design_matrix(grid, x)
        direct = np.linalg.solve(B, y)
        np.testing.assert_allclose(edge.coefficients, direct, atol=1e-9)
        resid = np.abs(B @ edge.coefficients - y).max()
        assert resid < 1e-10

    def test_refinement_rate_near_h4(self):
        # doubling the grid should shrink the sup-residual about 2^4-fold
        rng = np.random.default_rng(4)
        x = np.sort(rng.uniform(0, 1, 4000))
        y = np.sin(2 * np.pi * x)
        residuals = {}
        for intervals in (20, 40):
            grid = KnotGrid(degree=3, intervals=intervals, domain=(0.0, 1.0))
            edge = fit_spline(np.column_stack([x, y]), grid)
            residuals[intervals] = np.abs(
                design_matrix(grid, x) @ edge.coefficients - y
            ).max()
        ratio = residuals[20] / residuals[40]
        assert 8.0 < ratio < 32.0

    def test_rank_deficient_raises_without_ridge(self):
        grid = KnotGrid(degree=3, intervals=6, domain=(0.0, 1.0))
        # all samples piled at two points cannot determine 9 coefficients
        x = np.array([0.2] * 5 + [0.8] * 5)
        samples = np.column_stack([x, np.ones_like(x)])
        with pytest.raises(np.linalg.LinAlgError, match="ridge"):
            fit_spline(samples, grid, ridge=0.0)
        fitted = fit_spline(samples, grid, ridge=1e-6)  # stabilized solve succeeds
        assert np.all(np.isfinite(fitted.coefficients))

    def test_recovers_generating_coefficients(self):
        rng = np.random.default_rng(9)
        grid = KnotGrid(degree=3, intervals=8, domain=(-1.0, 1.0))
        truth = rng.normal(0, 1, grid.basis_count)
        x = rng.uniform(-1, 1, 200)
        y = design_matrix(grid, x) @ truth
        edge = fit_spline(np.column_stack([x, y]), grid, ridge=0.0)
        np.testing.assert_allclose(edge.coefficients, truth, atol=1e-8)

    def test_too_few_samples(self):
        grid = KnotGrid()
        with pytest.raises(ConfigError, match="at least"):
            fit_spline([(0.1, 1.0), (0.5, 2.0)], grid)
