import csv
import dataclasses
import math

import numpy as np
import pytest

from bssn import (
    ConfigError,
    LineSearchError,
    SolverConfig,
    classify,
    dir_derivative_merit,
    merit,
    residual_map,
    solve,
)
from bssn.experiments import ista_oracle
from bssn.lcp import solve_lcp
from bssn.newton import (
    HISTORY_COLUMNS,
    armijo_search,
    assemble_reduced_lcp,
    newton_direction,
    quadratic_rate_diagnostic,
    write_history_csv,
)

from _factories import dense_quadratic, random_quadratic, random_robust, scalar_quadratic


def explicit_lcp(problem, u, modified):
    """N and z by literal block formulas with an explicit inverse."""
    part = classify(problem, u)
    A, O, P, Q = part.sets(modified)
    M = problem.hessian(u)
    F = part.residual
    g = problem.gamma
    inv = np.linalg.inv(M[np.ix_(A, A)]) if A.size else np.zeros((0, 0))

    def blk(r, c):
        return M[np.ix_(r, c)]

    def schur(r, c):
        return blk(r, c) - blk(r, A) @ inv @ blk(A, c)

    N = g * np.block([[schur(P, P), -schur(P, Q)], [-schur(Q, P), schur(Q, Q)]])
    top = g * (blk(P, A) @ inv @ blk(A, O) - blk(P, O)) @ u[O] - blk(P, A) @ inv @ F[A] + F[P]
    bot = g * (blk(Q, O) - blk(Q, A) @ inv @ blk(A, O)) @ u[O] + blk(Q, A) @ inv @ F[A] - F[Q]
    z = np.concatenate([top, bot]) - N @ np.concatenate([u[P], -u[Q]])
    return N, z, (A, O, P, Q)


class TestAssembly:
    def test_three_dimensional_case(self):
        # k=0 in A+ with u >= 0, k=1 in A+_+ (upper < u < 0), k=2 in A-_- (0 < u < lower)
        M = np.array([[3.0, 1.0, 0.5], [1.0, 2.0, 0.3], [0.5, 0.3, 2.5]])
        w = np.array([0.1, 0.1, 0.1])
        u = np.array([1.0, -0.5, 0.5])
        grad_target = np.array([0.0, -2.0, 2.0])  # upper = (0.1, -1.9, 2.1)
        c = M @ u - grad_target
        p = dense_quadratic(M, c, w)
        part = classify(p, u)
        assert list(part.modified_a_plus) == [0]
        assert list(part.modified_i_plus) == [1]
        assert list(part.modified_i_minus) == [2]
        red = assemble_reduced_lcp(p, u, part, True)
        N, z, _ = explicit_lcp(p, u, True)
        np.testing.assert_allclose(red.instance.n_mat, N, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(red.instance.z_vec, z, rtol=1e-12, atol=1e-12)
        assert red.sle_count == 3
        assert red.instance.back_map == ((1, "plus"), (2, "minus"))

    @pytest.mark.parametrize("modified", [True, False])
    def test_random_against_explicit(self, modified):
        rng = np.random.default_rng(11)
        hits = 0
        for _ in range(40):
            p = random_quadratic(rng, n=12, gamma=rng.uniform(0.5, 5))
            if not modified:
                # widen the equality sets so the plain LCP block is populated
                p = dataclasses.replace(p, boundary_tol=0.9 * p.gamma * p.w0)
            u = rng.standard_normal(12) * 2
            red = assemble_reduced_lcp(p, u, classify(p, u), modified)
            N, z, sets = explicit_lcp(p, u, modified)
            np.testing.assert_allclose(red.instance.n_mat, N, atol=1e-9)
            np.testing.assert_allclose(red.instance.z_vec, z, atol=1e-9)
            hits += red.lcp_size > 0
        assert hits > 10

    def test_empty_lcp_block(self):
        p = scalar_quadratic()
        u = np.array([2.0])
        red = assemble_reduced_lcp(p, u, classify(p, u), True)
        assert red.lcp_size == 0 and red.sle_count == 1

    def test_empty_active_set(self):
        # everything in the LCP block: N = gamma * D M D
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        u = np.array([-0.5, 0.5])
        c = M @ u - np.array([-2.0, 2.0])
        p = dense_quadratic(M, c, [0.1, 0.1], gamma=2.0)
        part = classify(p, u)
        red = assemble_reduced_lcp(p, u, part, True)
        assert red.sle_size == 0
        D = np.diag([1.0, -1.0])
        np.testing.assert_allclose(red.instance.n_mat, 2.0 * D @ M @ D)


def newton_data(p, u, modified):
    part = classify(p, u)
    red = assemble_reduced_lcp(p, u, part, modified)
    sol = solve_lcp(red.instance)
    return part, red, sol, newton_direction(p, u, part, sol, modified, red)


class TestDirection:
    def test_zero_at_solution(self):
        p = scalar_quadratic()
        _, _, _, d = newton_data(p, np.array([1.0]), True)
        np.testing.assert_allclose(d, 0.0, atol=1e-15)

    def test_scalar_one_step(self):
        p = scalar_quadratic()
        _, _, _, d = newton_data(p, np.array([2.0]), True)
        np.testing.assert_allclose(d, [-1.0])
        res = solve(p, np.array([2.0]))
        assert res.n_steps == 1 and res.u_star[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("modified", [True, False])
    def test_generalized_newton_equation(self, modified):
        rng = np.random.default_rng(12)
        for _ in range(30):
            p = random_quadratic(rng, n=25, gamma=rng.uniform(0.5, 3))
            u = rng.standard_normal(25) * 2
            part, red, sol, d = newton_data(p, u, modified)
            A, O, P, Q = red.sets
            F = part.residual
            Md = p.gamma * (p.hessian(u) @ d)
            np.testing.assert_allclose(Md[A], -F[A], atol=1e-9)
            np.testing.assert_allclose(d[O], -u[O])
            x = np.concatenate([d[P] + u[P], -d[Q] - u[Q]])
            y = np.concatenate([Md[P] + F[P], -Md[Q] - F[Q]])
            np.testing.assert_allclose(x, sol.x, atol=1e-9)
            np.testing.assert_allclose(y, sol.y, atol=1e-8)

    def test_direction_identities(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            p = random_quadratic(rng, n=25)
            u = rng.standard_normal(25) * 2
            part, red, sol, d = newton_data(p, u, True)
            g = p.gamma
            Md = g * (p.hessian(u) @ d)
            up, lo = part.upper, part.lower
            k = part.modified_a_plus
            np.testing.assert_allclose(up[k] * Md[k], -up[k] ** 2, atol=1e-9)
            k = part.modified_a_minus
            np.testing.assert_allclose(lo[k] * Md[k], -lo[k] ** 2, atol=1e-9)
            k = part.modified_i_zero
            np.testing.assert_allclose(u[k] * d[k], -u[k] ** 2, atol=1e-12)
            F = part.residual
            kp = np.concatenate([part.a_plus_plus, part.i_zero_plus, part.i_plus[F[part.i_plus] < 0]])
            assert np.all(up[kp] * Md[kp] + up[kp] ** 2 <= 1e-10)
            km = np.concatenate([part.a_minus_minus, part.i_zero_minus, part.i_minus[F[part.i_minus] > 0]])
            assert np.all(lo[km] * Md[km] + lo[km] ** 2 <= 1e-10)
            ks = np.concatenate([kp, km])
            assert np.all(u[ks] * d[ks] + u[ks] ** 2 <= 1e-10)

    def test_descent_and_direction_bound(self):
        rng = np.random.default_rng(14)
        p = random_robust(rng, m=200, n=10)
        res = solve(p, config=SolverConfig(store_iterates=True))
        ratios = []
        for u, d in zip(res.iterates, res.directions):
            theta = merit(p, u)
            assert dir_derivative_merit(p, u, d) <= -2 * theta + 1e-9
            ratios.append(np.linalg.norm(d) / math.sqrt(theta))
        assert max(ratios) < 1e6


class TestArmijo:
    def test_full_step(self):
        p = scalar_quadratic()
        assert armijo_search(p, np.array([2.0]), np.array([-1.0])) == (1.0, 0)

    def test_backtracks(self):
        p = scalar_quadratic()
        t, l = armijo_search(p, np.array([2.0]), np.array([-3.5]))
        assert t == 0.5**l and l >= 1
        u = np.array([2.0])
        assert merit(p, u + t * np.array([-3.5])) < merit(p, u)

    def test_ascent_direction_raises(self):
        p = scalar_quadratic()
        with pytest.raises(LineSearchError):
            armijo_search(p, np.array([2.0]), np.array([1.0]), SolverConfig(max_backtracks=5))


class TestSolve:
    def test_already_solved(self):
        res = solve(scalar_quadratic(), np.array([1.0]))
        assert res.converged and res.n_steps == 0

    @pytest.mark.parametrize("variant", ["bssn", "modbssn", "hybrid"])
    def test_matches_ista(self, variant):
        rng = np.random.default_rng(15)
        p = random_quadratic(rng, n=40)
        res = solve(p, config=SolverConfig(variant=variant))
        assert res.converged
        assert np.linalg.norm(res.u_star - ista_oracle(p)) <= 1e-6

    def test_monotone_records(self):
        rng = np.random.default_rng(16)
        res = solve(random_robust(rng))
        r = [rec.residual_norm for rec in res.records]
        assert all(b < a for a, b in zip(r, r[1:]))
        assert res.records[0].step is None

    def test_gamma_override(self):
        rng = np.random.default_rng(17)
        p = random_quadratic(rng, n=20)
        a = solve(p, config=SolverConfig(gamma=10.0)).u_star
        b = solve(p).u_star
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_max_outer(self):
        rng = np.random.default_rng(18)
        res = solve(random_quadratic(rng, n=30), config=SolverConfig(max_outer=1, tol=1e-14))
        assert not res.converged and res.reason == "max_outer" and res.n_steps == 1

    def test_hybrid_forced_switch(self):
        rng = np.random.default_rng(19)
        p = random_quadratic(rng, n=30)
        res = solve(p, config=SolverConfig(variant="hybrid", j_max=0, t_min=1.0))
        damped = [r.j for r in res.records[1:] if r.step < 1]
        if damped:
            assert res.switch_step == damped[0]
            assert all(r.variant_active == "modbssn" for r in res.records[res.switch_step + 1:])
        else:
            assert res.switch_step is None

    def test_variants_agree_near_solution(self):
        rng = np.random.default_rng(20)
        p = random_quadratic(rng, n=30)
        u_star = solve(p, config=SolverConfig(tol=1e-12)).u_star
        u = u_star + 1e-9 * rng.standard_normal(30)
        _, _, _, d1 = newton_data(p, u, True)
        _, _, _, d2 = newton_data(p, u, False)
        np.testing.assert_allclose(d1, d2, atol=1e-14)

    def test_nonfinite_start(self):
        from bssn import NumericalError

        with pytest.raises(NumericalError):
            solve(scalar_quadratic(), np.array([np.nan]))


@pytest.mark.parametrize(
    "kwargs",
    [dict(armijo_sigma=0.5), dict(armijo_beta=1.0), dict(tol=0.0), dict(gamma=-1.0), dict(variant="x")],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SolverConfig(**kwargs)


def test_rate_diagnostic():
    rng = np.random.default_rng(21)
    p = random_robust(rng, m=300, n=15)
    res = solve(p, config=SolverConfig(store_iterates=True, tol=1e-13))
    ratios = quadratic_rate_diagnostic(res.iterates, res.u_star)
    assert all(np.isfinite(ratios))
    # one exact step gives a single finite ratio
    one = solve(scalar_quadratic(), np.array([2.0]), SolverConfig(store_iterates=True))
    assert len(quadratic_rate_diagnostic(one.iterates, one.u_star)) == 1


def test_ista_ratios_blow_up():
    rng = np.random.default_rng(22)
    p = random_quadratic(rng, n=20)
    u_star = solve(p, config=SolverConfig(tol=1e-13)).u_star
    it = [np.zeros(20)]
    s = 0.5 / np.linalg.eigvalsh(p.hessian(it[0]))[-1]
    from bssn import soft_threshold

    for _ in range(200):
        it.append(soft_threshold(it[-1] - s * p.gradient(it[-1]), s * p.weights))
    ratios = quadratic_rate_diagnostic(it[:150], u_star)
    assert ratios[-1] > 100 * ratios[0]


def test_history_csv(tmp_path):
    rng = np.random.default_rng(23)
    res = solve(random_quadratic(rng, n=20))
    path = tmp_path / "h.csv"
    write_history_csv(res.records, path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == HISTORY_COLUMNS
    assert len(rows) == res.n_steps + 2
    assert rows[1][3:] == ["", "", "", ""]
    assert rows[1][1] == f"{res.records[0].residual_norm:.6e}"
