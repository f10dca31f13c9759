import numpy as np
import pytest

from bssn import (
    DimensionError,
    NumericalError,
    Objective,
    WeightedL1Problem,
    classify,
    dir_derivative_F,
    dir_derivative_merit,
    hessian_bounds,
    merit,
    residual_map,
    soft_threshold,
    tikhonov_value,
)

from _factories import dense_quadratic, random_quadratic, scalar_quadratic


class TestSoftThreshold:
    def test_zero_input(self):
        np.testing.assert_array_equal(soft_threshold(np.zeros(4), np.ones(4)), np.zeros(4))

    def test_hand_example(self):
        out = soft_threshold([3.0, -1.0, 0.5], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(out, [2.0, 0.0, 0.0])

    def test_matches_loop(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal(200) * 3
        beta = rng.uniform(0.1, 2, 200)
        ref = np.array([np.sign(a) * max(abs(a) - b, 0.0) for a, b in zip(v, beta)])
        np.testing.assert_allclose(soft_threshold(v, beta), ref)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            soft_threshold(np.ones(3), np.ones(2))


class TestProblem:
    def test_scalar_weight_needs_n(self):
        obj = scalar_quadratic().objective
        with pytest.raises(DimensionError):
            WeightedL1Problem(obj, 1.0)

    @pytest.mark.parametrize("w", [0.0, -1.0, np.nan])
    def test_rejects_nonpositive_weights(self, w):
        with pytest.raises(ValueError):
            WeightedL1Problem(scalar_quadratic().objective, np.array([w]))

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            WeightedL1Problem(scalar_quadratic().objective, np.array([1.0]), gamma=0.0)

    def test_w0_and_immutability(self):
        p = WeightedL1Problem(scalar_quadratic().objective, np.array([0.5, 2.0]))
        assert p.w0 == 0.5
        with pytest.raises(ValueError):
            p.weights[0] = 3.0

    def test_nonfinite_gradient(self):
        obj = Objective(lambda u: 0.0, lambda u: np.full_like(u, np.nan), lambda u: np.eye(u.size))
        p = WeightedL1Problem(obj, np.ones(2))
        with pytest.raises(NumericalError):
            residual_map(p, np.zeros(2))

    def test_nonfinite_hessian(self):
        obj = Objective(lambda u: 0.0, lambda u: u, lambda u: np.full((2, 2), np.inf))
        p = WeightedL1Problem(obj, np.ones(2))
        with pytest.raises(NumericalError):
            p.hessian(np.zeros(2))

    def test_wrong_length(self):
        with pytest.raises(DimensionError):
            residual_map(scalar_quadratic(), np.zeros(2))


class TestResidual:
    def test_zero_when_gradient_swallowed(self):
        M = np.diag([2.0, 3.0])
        p = dense_quadratic(M, [0.4, -0.7], [1.0, 1.0])
        np.testing.assert_array_equal(residual_map(p, np.zeros(2)), 0.0)

    def test_scalar_hand_value(self):
        # g = 0.5 (u - 2)^2, w = 1, gamma = 1, u = 2: F = 2 - S_1(2) = 1
        np.testing.assert_allclose(residual_map(scalar_quadratic(), np.array([2.0])), [1.0])

    def test_merit_identity(self):
        rng = np.random.default_rng(3)
        p = random_quadratic(rng, n=30)
        u = rng.standard_normal(30)
        f = residual_map(p, u)
        assert merit(p, u) == pytest.approx(sum(x * x for x in f))

    def test_merit_norm(self):
        # F(u) = u - S(u - gamma*grad); with g = 0 and large w, F(u) = u
        obj = Objective(lambda u: 0.0, np.zeros_like, lambda u: np.zeros((2, 2)))
        p = WeightedL1Problem(obj, np.full(2, 100.0))
        assert merit(p, np.array([3.0, 4.0])) == pytest.approx(25.0)

    def test_tikhonov_value(self):
        p = scalar_quadratic(w=1.5)
        assert tikhonov_value(p, np.array([-1.0])) == pytest.approx(0.5 * 9 + 1.5)


class TestClassify:
    def test_i_zero_minus_example(self):
        p = scalar_quadratic(center=0.0)
        part = classify(p, np.array([3.0]))
        assert list(part.i_zero) == [0]
        assert list(part.i_zero_minus) == [0]
        assert list(part.modified_i_minus) == [0]
        assert part.modified_i_zero.size == 0

    def test_a_plus_example(self):
        p = scalar_quadratic(center=5.0)
        part = classify(p, np.array([0.0]))
        assert list(part.a_plus) == [0]
        assert part.a_plus_plus.size == 0
        assert list(part.modified_a_plus) == [0]

    def test_boundary_sets(self):
        # curvature 2, u = -1: upper = 2u + 1 = u
        p = scalar_quadratic(center=0.0, w=1.0, curvature=2.0)
        part = classify(p, np.array([-1.0]))
        assert list(part.i_plus) == [0]
        assert list(part.modified_i_plus) == [0]

    def test_boundary_tolerance_widens(self):
        obj = scalar_quadratic(center=0.0, curvature=2.0).objective
        p = WeightedL1Problem(obj, np.array([1.0]), boundary_tol=1e-6)
        part = classify(p, np.array([-1.0 + 1e-8]))
        assert list(part.i_plus) == [0]

    def test_partitions(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = random_quadratic(rng, n=40)
            part = classify(p, rng.standard_normal(40) * 2)
            plain = np.concatenate([part.a_plus, part.a_minus, part.i_zero, part.i_plus, part.i_minus])
            mod = np.concatenate(
                [part.modified_a_plus, part.modified_a_minus, part.modified_i_zero,
                 part.modified_i_plus, part.modified_i_minus]
            )
            np.testing.assert_array_equal(np.sort(plain), np.arange(40))
            np.testing.assert_array_equal(np.sort(mod), np.arange(40))
            assert set(part.a_plus_plus) <= set(part.a_plus)
            assert set(part.a_minus_minus) <= set(part.a_minus)
            assert set(part.i_zero_plus) | set(part.i_zero_minus) <= set(part.i_zero)

    def test_subsets_empty_at_solution(self):
        from bssn import solve

        rng = np.random.default_rng(6)
        p = random_quadratic(rng, n=30)
        u = solve(p).u_star
        part = classify(p, u)
        # at the exact zero these sets are empty; u_star is within tol
        assert part.sign_inconsistent.size == 0


class TestDirectionalDerivative:
    def test_zero_direction(self):
        rng = np.random.default_rng(7)
        p = random_quadratic(rng, n=20)
        u = rng.standard_normal(20)
        np.testing.assert_array_equal(dir_derivative_F(p, u, np.zeros(20)), 0.0)
        assert dir_derivative_merit(p, u, np.zeros(20)) == 0.0

    def test_finite_differences(self):
        rng = np.random.default_rng(8)
        checked = 0
        for _ in range(30):
            p = random_quadratic(rng, n=20)
            u = rng.standard_normal(20)
            d = rng.standard_normal(20)
            t = 1e-7
            if classify(p, u + t * d).a_plus.tolist() != classify(p, u).a_plus.tolist():
                continue
            fd = (residual_map(p, u + t * d) - residual_map(p, u)) / t
            an = dir_derivative_F(p, u, d)
            assert np.linalg.norm(fd - an) <= 1e-5 * max(1.0, np.linalg.norm(an))
            fdm = (merit(p, u + t * d) - merit(p, u)) / t
            assert fdm == pytest.approx(dir_derivative_merit(p, u, d), rel=1e-4, abs=1e-6)
            checked += 1
        assert checked > 20

    def test_one_sided_on_boundary(self):
        p = scalar_quadratic(center=0.0, w=1.0, curvature=2.0)
        u = np.array([-1.0])
        for d in (1.0, -1.0, 0.3):
            t = 1e-8
            fd = (residual_map(p, u + t * d) - residual_map(p, u)) / t
            np.testing.assert_allclose(dir_derivative_F(p, u, np.array([d])), fd, atol=1e-6)

    def test_linear_without_boundary(self):
        rng = np.random.default_rng(9)
        p = random_quadratic(rng, n=15)
        u = rng.standard_normal(15)
        d1, d2 = rng.standard_normal(15), rng.standard_normal(15)
        lhs = dir_derivative_F(p, u, d1 + 2 * d2)
        rhs = dir_derivative_F(p, u, d1) + 2 * dir_derivative_F(p, u, d2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_hessian_bounds():
    M = np.diag([1.0, 4.0])
    p = dense_quadratic(M, [0, 0], [1, 1])
    assert hessian_bounds(p, [np.zeros(2)]) == pytest.approx((1.0, 4.0))
    obj = Objective(lambda u: 0.0, lambda u: u, lambda u: np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NumericalError):
        hessian_bounds(WeightedL1Problem(obj, np.ones(2)), [np.zeros(2)])
