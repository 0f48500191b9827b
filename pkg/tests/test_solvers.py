import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparseinv.operators import IdentityOperator, MatrixOperator, compose
from sparseinv.optim import OptConfig
from sparseinv.solvers import (
    DivergenceError,
    LassoParams,
    Solution,
    SparseProblem,
    VgParams,
    VgState,
    brute_force_l0,
    lasso_gradient,
    lasso_objective,
    reconstruct,
    refit_support,
    soft_threshold,
    solve,
    vg_e_rec,
    vg_free_energy,
    vg_gradient,
)
from sparseinv.transforms import DctBasis, dct_analyze


def dense_problem(a, y):
    return SparseProblem(MatrixOperator(np.asarray(a, float)), np.asarray(y, float))


def random_problem(rng, m=5, n=8):
    return dense_problem(rng.standard_normal((m, n)), rng.standard_normal(m))


def planted(rng, n=10, m=8, k=2, noise=0.0):
    a = rng.standard_normal((m, n))
    support = np.sort(rng.choice(n, k, replace=False))
    w = np.zeros(n)
    w[support] = rng.choice([-1, 1], k) * rng.uniform(1.0, 2.0, k)
    y = a @ w + noise * rng.standard_normal(m)
    return dense_problem(a, y), support, w


def central_diff(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestLasso:
    def test_zero_coefficients(self):
        p = dense_problem(np.eye(2), [3.0, 4.0])
        assert lasso_objective(p, np.zeros(2), LassoParams(1.0)) == pytest.approx(12.5)

    def test_exact_solution_no_penalty(self):
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        w = np.array([0.5, -1.0])
        p = dense_problem(a, a @ w)
        assert lasso_objective(p, w, LassoParams(0.0)) == pytest.approx(0.0, abs=1e-20)

    def test_hand_value(self):
        p = dense_problem(np.eye(2), [1.0, 0.0])
        assert lasso_objective(p, np.array([1.0, 0.0]), LassoParams(0.5)) == 0.5

    def test_gradient_trivial(self):
        p = dense_problem(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(lasso_gradient(p, np.zeros(3), LassoParams(2.0)), 0.0)
        p = dense_problem(np.eye(1), [2.0])
        np.testing.assert_array_equal(lasso_gradient(p, np.array([1.0]), LassoParams(0.0)), [-1.0])

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(0)
        p = random_problem(rng)
        params = LassoParams(0.7)
        for _ in range(20):
            w = rng.standard_normal(8)
            w[np.abs(w) < 1e-3] = 0.1
            fd = central_diff(lambda v: lasso_objective(p, v, params), w)
            assert rel_err(lasso_gradient(p, w, params), fd) < 1e-5

    def test_dimension_error(self):
        p = random_problem(np.random.default_rng(0))
        with pytest.raises(ValueError):
            lasso_objective(p, np.zeros(7), LassoParams(1.0))
        with pytest.raises(ValueError):
            LassoParams(-1.0)

    def test_soft_threshold(self):
        np.testing.assert_array_equal(soft_threshold([-3.0, -0.5, 0.0, 0.5, 3.0], 1.0),
                                      [-2.0, 0.0, 0.0, 0.0, 2.0])


class TestVgEnergy:
    def test_binary_on(self):
        rng = np.random.default_rng(1)
        p = random_problem(rng)
        w = rng.standard_normal(8)
        big = np.full(8, 50.0)  # logistic(50) == 1 in double precision
        r = p.y - p.theta.apply(w)
        assert vg_e_rec(p, VgState(w, big)) == pytest.approx(0.5 * r @ r, rel=1e-12)

    def test_binary_off(self):
        rng = np.random.default_rng(2)
        p = random_problem(rng)
        e = vg_e_rec(p, VgState(rng.standard_normal(8), np.full(8, -800.0)))
        assert e == pytest.approx(0.5 * p.y @ p.y, rel=1e-12)

    def test_hand_value(self):
        p = dense_problem(np.eye(2), [1.0, 1.0])
        assert vg_e_rec(p, VgState(np.ones(2), np.zeros(2))) == pytest.approx(0.5, abs=1e-15)

    def test_symmetric_gate_entropy(self):
        rng = np.random.default_rng(3)
        p = random_problem(rng)
        w = rng.standard_normal(8)
        state = VgState(w, np.zeros(8))
        f = vg_free_energy(p, state, VgParams(0.0))
        expected = 0.5 * 5 * np.log(vg_e_rec(p, state)) + 8 * np.log(0.5)
        assert f == pytest.approx(expected, rel=1e-12)

    def test_perfect_fit_is_clamped(self):
        p = dense_problem(np.eye(2), [1.0, -1.0])
        f = vg_free_energy(p, VgState(np.array([1.0, -1.0]), np.full(2, 800.0)), VgParams(0.0))
        assert np.isfinite(f)
        assert f == pytest.approx(0.5 * 2 * np.log(1e-300), rel=1e-9)

    def test_binary_gates_remove_variance(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            p = random_problem(rng)
            w = rng.standard_normal(8)
            m = np.where(rng.random(8) < 0.5, 1e-9, 1 - 1e-9)
            r = p.y - p.theta.apply(w * m)
            e = vg_e_rec(p, VgState(w, np.log(m / (1 - m))))
            assert abs(e - 0.5 * r @ r) < 1e-6


class TestVgGradient:
    def test_symmetric_point(self):
        rng = np.random.default_rng(5)
        p = random_problem(rng)
        g_w, g_l = vg_gradient(p, VgState(np.zeros(8), np.zeros(8)), VgParams(0.0))
        e = 0.5 * p.y @ p.y
        np.testing.assert_allclose(g_w, 0.5 * 5 / e * (-0.5 * p.theta.adjoint_apply(p.y)), rtol=1e-12)
        np.testing.assert_array_equal(g_l, 0.0)

    @pytest.mark.parametrize("gamma", [-4.0, 0.0, 2.5])
    def test_finite_difference(self, gamma):
        rng = np.random.default_rng(6)
        params = VgParams(gamma)
        for _ in range(10):
            p = random_problem(rng)
            for _ in range(2):
                w, logit = rng.standard_normal(8), 2 * rng.standard_normal(8)
                x = np.concatenate([w, logit])

                def f(v):
                    return vg_free_energy(p, VgState(v[:8], v[8:]), params)

                fd = central_diff(f, x)
                g = np.concatenate(vg_gradient(p, VgState(w, logit), params))
                assert rel_err(g, fd) < 1e-5

    def test_stationary_after_solve(self):
        # separable design: every coefficient is observed twice with noise
        from scipy.optimize import root

        rng = np.random.default_rng(0)
        x = np.array([3.0, 0.0, -2.0, 0.0, 0.0, 2.5])
        a = np.vstack([np.eye(6), np.eye(6)])
        p = dense_problem(a, a @ x + 0.05 * rng.standard_normal(12))
        params = VgParams(-3.0)
        sol = solve(p, params)
        x0 = np.concatenate([sol.w, np.log(sol.m / (1 - sol.m))])

        def f(v):
            return vg_free_energy(p, VgState(v[:6], v[6:]), params)

        def g(v):
            return np.concatenate(vg_gradient(p, VgState(v[:6], v[6:]), params))

        # Levenberg-Marquardt on the gradient polishes the solver's end point
        polished = root(g, x0, method="lm", options={"xtol": 1e-15, "ftol": 1e-15})
        assert np.linalg.norm(g(polished.x)) < 1e-6
        assert f(x0) - f(polished.x) < 1e-2
        opt = VgState(polished.x[:6], polished.x[6:])
        np.testing.assert_allclose(sol.coeffs, opt.w * opt.m, atol=1e-3)
        support, w_best, _ = brute_force_l0(p, 3)
        assert tuple(np.flatnonzero(sol.m > 0.5)) == support == (0, 2, 5)
        np.testing.assert_allclose(sol.coeffs[list(support)], w_best[list(support)], atol=1e-3)


class TestBruteForce:
    def test_planted_one_sparse(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((6, 5))
        p = dense_problem(a, a[:, 1])
        support, w, res = brute_force_l0(p, 1)
        assert support == (1,)
        assert res < 1e-10
        np.testing.assert_allclose(w, [0, 1, 0, 0, 0], atol=1e-10)

    def test_full_support_is_least_squares(self):
        rng = np.random.default_rng(8)
        p = random_problem(rng, m=9, n=5)
        _, _, res = brute_force_l0(p, 5)
        a = p.theta.to_matrix()
        ls = np.linalg.lstsq(a, p.y, rcond=None)[0]
        assert res == pytest.approx(np.linalg.norm(p.y - a @ ls), rel=1e-9)

    def test_planted_two_sparse(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            p, support, _ = planted(rng)
            found, _, res = brute_force_l0(p, 2)
            assert found == tuple(support)
            assert res < 1e-9

    def test_tie_prefers_smaller_support(self):
        p = dense_problem(np.eye(3), [1.0, 0.0, 0.0])
        assert brute_force_l0(p, 3)[0] == (0,)

    def test_refuses_large(self):
        p = dense_problem(np.ones((2, 21)), [1.0, 1.0])
        with pytest.raises(ValueError, match="21"):
            brute_force_l0(p, 2)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(10)
        p = random_problem(rng, m=6, n=6)
        a = p.theta.to_matrix()
        best = min(
            np.linalg.norm(p.y - a[:, list(s)] @ np.linalg.lstsq(a[:, list(s)], p.y, rcond=None)[0])
            for k in (1, 2, 3) for s in itertools.combinations(range(6), k)
        )
        assert brute_force_l0(p, 3)[2] == pytest.approx(best, rel=1e-9)


class TestSolve:
    def test_unregularized_square(self):
        rng = np.random.default_rng(11)
        a = np.eye(6) + 0.2 * rng.standard_normal((6, 6))
        y = rng.standard_normal(6)
        sol = solve(dense_problem(a, y), LassoParams(0.0))
        direct = np.linalg.solve(a, y)
        assert rel_err(sol.coeffs, direct) < 1e-3
        assert sol.stop_reason == "lr_floor"
        assert sol.objective <= sol.initial_objective

    def test_lasso_orthonormal_soft_threshold(self):
        n = 32
        rng = np.random.default_rng(12)
        y = 2 * rng.standard_normal(n)
        p = SparseProblem(compose(IdentityOperator(n), DctBasis(n)), y)
        for lam in (0.1, 1.0):
            sol = solve(p, LassoParams(lam))
            np.testing.assert_allclose(sol.coeffs, soft_threshold(dct_analyze(y), lam), atol=1e-3)

    def test_vg_planted_support(self):
        rng = np.random.default_rng(13)
        p, support, _ = planted(rng)
        sol = solve(p, VgParams(-5.0))
        off = np.setdiff1d(np.arange(10), support)
        assert np.all(sol.m[support] > 0.99)
        assert np.all(sol.m[off] < 0.01)
        assert brute_force_l0(p, 2)[0] == tuple(support)

    def test_closed_gates_are_a_local_minimum(self):
        # from m = 1/2 the prior closes every gate before w has grown; with M = 8
        # the data term cannot reopen them and a quasi-Newton polish stays put
        from scipy.optimize import minimize

        rng = np.random.default_rng(4)
        planted(rng, k=1)  # skip the first instance of the same stream
        p, _, w_true = planted(rng)
        params = VgParams(-5.0)
        sol = solve(p, params)
        assert sol.stop_reason == "lr_floor"
        assert np.all(sol.m < 0.2)

        def f(v):
            return vg_free_energy(p, VgState(v[:10], v[10:]), params)

        x = np.concatenate([sol.w, np.log(sol.m / (1 - sol.m))])
        polished = minimize(f, x, method="BFGS", options={"gtol": 1e-10})
        assert polished.fun > f(x) - 1e-6
        planted_gates = np.where(w_true != 0, 20.0, -20.0)
        assert f(np.concatenate([w_true, planted_gates])) < f(x) - 20

    def test_strong_prior_closes_gates(self):
        p = random_problem(np.random.default_rng(14))
        sol = solve(p, VgParams(-60.0), OptConfig(max_iters=3000))
        assert np.all(sol.m < 1e-3)

    def test_vg_beats_binary_supports(self):
        # soft gates usually end below every binary support; the landscape is
        # nonconvex, so an occasional run stops in a worse local minimum
        hi, lo = np.log((1 - 1e-9) / 1e-9), np.log(1e-9 / (1 - 1e-9))
        params = VgParams(-3.0)
        wins = 0
        for seed in range(15, 25):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal((12, 6))
            w = np.array([0, 1.5, 0, -1.0, 0, 0])
            p = dense_problem(a, a @ w + 0.05 * rng.standard_normal(12))
            sol = solve(p, params)
            f_solver = vg_free_energy(p, VgState(sol.w, np.log(sol.m / (1 - sol.m))), params)
            best = np.inf
            for k in range(7):
                for s in itertools.combinations(range(6), k):
                    ws, _ = refit_support(p, s)
                    gates = np.full(6, lo)
                    gates[list(s)] = hi
                    best = min(best, vg_free_energy(p, VgState(ws, gates), params))
            wins += f_solver <= best + 1e-9
        assert wins >= 9

    def test_deterministic_and_batched(self):
        rng = np.random.default_rng(16)
        a = rng.standard_normal((7, 9))
        ys = rng.standard_normal((3, 7))
        gammas = np.array([-3.0, -1.0, -6.0])
        batched = solve(SparseProblem(MatrixOperator(a), ys), VgParams(gammas),
                        OptConfig(batch=2), seeds=[5, 6, 7])
        for i in range(3):
            single = solve(dense_problem(a, ys[i]), VgParams(gammas[i]), OptConfig(seed=5 + i))
            assert np.array_equal(single.coeffs, batched.coeffs[i])
            assert single.iterations == batched.iterations[i]

    def test_divergence_reports_iteration(self):
        class Exploding(MatrixOperator):
            calls = 0

            def _apply(self, x):
                Exploding.calls += 1
                out = super()._apply(x)
                return out * np.nan if Exploding.calls > 4 else out

        p = SparseProblem(Exploding(np.eye(3)), np.ones(3))
        with pytest.raises(DivergenceError, match="iteration 4"):
            solve(p, LassoParams(0.1))
        Exploding.calls = 0
        sol = solve(p, LassoParams(0.1), raise_on_nan=False)
        assert sol.stop_reason == "nan_abort"

    def test_gates_stay_open_interval(self):
        rng = np.random.default_rng(17)
        p, _, _ = planted(rng, noise=0.01)
        sol = solve(p, VgParams(-5.0))
        assert np.all((sol.m > 0) & (sol.m < 1)) or np.all(np.isfinite(sol.w))
        assert np.all(np.isfinite(sol.coeffs))

    def test_json_round_trip(self):
        p = random_problem(np.random.default_rng(18))
        sol = solve(p, VgParams(-2.0), OptConfig(max_iters=50))
        back = Solution.from_json(sol.to_json())
        np.testing.assert_array_equal(back.coeffs, sol.coeffs)
        assert back.method == "vg" and back.hyperparam == -2.0
        assert back.iterations == 50 and back.stop_reason == "max_iters"
        assert back.objective == sol.objective


class TestReconstruct:
    def test_zero(self):
        assert np.all(reconstruct(np.zeros(16), DctBasis(16)) == 0)

    def test_identity(self):
        c = np.arange(5.0)
        np.testing.assert_array_equal(reconstruct(c), c)

    def test_round_trip(self):
        x = np.random.default_rng(19).standard_normal(64)
        assert np.max(np.abs(reconstruct(dct_analyze(x), DctBasis(64)) - x)) < 1e-9

    def test_mismatch(self):
        with pytest.raises(ValueError):
            reconstruct(np.zeros(5), DctBasis(6))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(-8, 3))
def test_vg_gradient_property(seed, gamma):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    w, logit = rng.standard_normal(8), 2 * rng.standard_normal(8)
    params = VgParams(gamma)

    def f(v):
        return vg_free_energy(p, VgState(v[:8], v[8:]), params)

    fd = central_diff(f, np.concatenate([w, logit]))
    assert rel_err(np.concatenate(vg_gradient(p, VgState(w, logit), params)), fd) < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_lasso_gradient_property(seed, lam):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    w = rng.standard_normal(8)
    w = np.where(np.abs(w) < 1e-3, 1e-2, w)
    fd = central_diff(lambda v: lasso_objective(p, v, LassoParams(lam)), w)
    assert rel_err(lasso_gradient(p, w, LassoParams(lam)), fd) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(-6, 6))
def test_least_squares_scaling(seed, power):
    # scaling y by a power of two scales the exact argmin bit for bit
    rng = np.random.default_rng(seed)
    p = random_problem(rng, m=9, n=4)
    c = 2.0**power
    w1, _ = refit_support(p, range(4))
    w2, _ = refit_support(dense_problem(p.theta.to_matrix(), c * p.y), range(4))
    np.testing.assert_array_equal(w2, c * w1)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31))
def test_oracle_dominance(seed):
    rng = np.random.default_rng(seed)
    p, _, _ = planted(rng, n=8, m=7, noise=0.01)
    sol = solve(p, VgParams(-4.0), OptConfig(max_iters=10_000))
    support = tuple(np.flatnonzero(sol.m > 0.5))
    _, vg_res = refit_support(p, support)
    _, _, best = brute_force_l0(p, max(len(support), 1))
    assert best <= vg_res + 1e-12
