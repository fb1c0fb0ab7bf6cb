"""Factor-graph Gaussian variational inference: expectations, assembly,
marginal extraction, and the sparse/dense route equivalence."""

import numpy as np
import pytest

from bayespace.elements import BayesElement
from bayespace.errors import NonSPD
from bayespace.experiments import ExperimentConfig, make_chain
from bayespace.gaussian import expected_derivatives
from bayespace.gvi import (Factor, FactorGraph, GaussianState, GviOptions, assemble,
                           factor_expectations, fill_pattern, gvi_dense_solve,
                           gvi_sparse_solve, gvi_step_dense, marginals_for_factors,
                           odom_factor, prior_factor, range_factor, stereo_factor)
from bayespace.measures import GaussianMeasure
from bayespace.quadrature import gh_spec
from bayespace.variational import GaussianSubspace, IterateOptions, iterate, reporting_grid

SPEC = gh_spec(10)


def quartic_factor(i: int, center: float, c4: float, c2: float) -> Factor:
    """Convex single-variable factor c4 (x-a)^4 + c2 (x-a)^2."""

    def phi(x):
        d = x[:, 0] - center
        return c4 * d**4 + c2 * d**2

    def grad(x):
        d = x[:, 0] - center
        return (4 * c4 * d**3 + 2 * c2 * d)[:, None]

    def hess(x):
        d = x[:, 0] - center
        return (12 * c4 * d**2 + 2 * c2)[:, None, None]

    return Factor(indices=(i,), phi=phi, grad=grad, hess=hess, kind="custom")


def polynomial_test_graph(n_vars: int, rng) -> FactorGraph:
    """Random convex polynomial graph: quartic unaries plus quadratic pairs."""
    factors = []
    for i in range(n_vars):
        factors.append(quartic_factor(i, rng.normal(0, 0.5),
                                      rng.uniform(0.02, 0.1), rng.uniform(0.3, 1.0)))
    for i in range(n_vars - 1):
        factors.append(odom_factor(i, i + 1, rng.normal(0, 0.5), rng.uniform(0.5, 2.0)))
    if n_vars > 3:
        factors.append(odom_factor(0, n_vars - 1, rng.normal(0, 0.5), 1.5))
    return FactorGraph(n_vars, tuple(factors))


class TestFactorBasics:
    def test_indices_must_increase(self):
        with pytest.raises(ValueError):
            odom_factor(3, 3, 0.0, 1.0)

    def test_graph_requires_coverage(self):
        with pytest.raises(ValueError):
            FactorGraph(3, (prior_factor(0, 0.0, 1.0), odom_factor(0, 1, 1.0, 1.0)))

    def test_odometry_hessian_structure(self):
        f = odom_factor(0, 1, 0.7, 0.25)
        h = f.hess(np.zeros((1, 2)))[0]
        assert np.allclose(h, np.array([[1, -1], [-1, 1]]) / 0.25)

    def test_factor_derivatives_match_finite_differences(self, stereo):
        rng = np.random.default_rng(2)
        for f in (prior_factor(0, 1.0, 2.0),
                  odom_factor(0, 1, 0.5, 0.3),
                  range_factor(0, 1, 5.0, 0.25, 2.0),
                  stereo_factor(0, stereo.z, 400.0, 0.1, 0.09)):
            x = rng.uniform(1.0, 10.0, size=(6, f.arity))
            elem = BayesElement(f.arity, f.phi)
            from bayespace.elements import element_grad, element_hess
            assert np.allclose(f.grad(x), element_grad(elem, x), rtol=1e-5, atol=1e-6)
            assert np.allclose(f.hess(x), element_hess(elem, x), rtol=1e-4, atol=1e-4)


class TestFactorExpectations:
    def test_unary_quadratic_exact(self):
        f = prior_factor(0, 2.0, 4.0)
        g, h = factor_expectations(f, (np.array([3.0]), np.array([[0.5]])), SPEC)
        assert g[0] == pytest.approx((3.0 - 2.0) / 4.0, rel=1e-12)
        assert h[0, 0] == pytest.approx(0.25, rel=1e-12)

    def test_binary_odometry_constant_hessian(self):
        f = odom_factor(0, 1, 1.0, 0.5)
        marg = (np.array([0.0, 1.2]), np.array([[0.3, 0.1], [0.1, 0.4]]))
        g, h = factor_expectations(f, marg, SPEC)
        assert np.allclose(h, np.array([[1, -1], [-1, 1]]) / 0.5, rtol=1e-12)
        assert g[1] == pytest.approx((1.2 - 0.0 - 1.0) / 0.5, rel=1e-10)

    def test_stereo_factor_matches_joint_route(self, stereo):
        f = stereo_factor(0, stereo.z, 400.0, 0.1, 0.09)
        nu = GaussianMeasure([21.0], [[3.0]])
        g_f, h_f = factor_expectations(f, (nu.mean, nu.covariance), gh_spec(20))
        g_e, h_e = expected_derivatives(f.as_element(), nu, gh_spec(20))
        assert np.allclose(g_f, g_e, rtol=1e-12)
        assert np.allclose(h_f, h_e, rtol=1e-12)


class TestAssemble:
    def test_single_full_support_factor(self):
        f = Factor(indices=(0, 1), phi=lambda x: np.zeros(x.shape[0]))
        graph = FactorGraph(2, (f,))
        gk = np.array([1.0, 2.0])
        hk = np.array([[3.0, 0.5], [0.5, 4.0]])
        g, h = assemble(graph, [(gk, hk)])
        assert np.array_equal(g, gk) and np.array_equal(h, hk)

    def test_chain_pattern_is_tridiagonal(self):
        factors = [prior_factor(0, 0.0, 1.0)]
        factors += [odom_factor(i, i + 1, 1.0, 0.1) for i in range(4)]
        pattern = fill_pattern(FactorGraph(5, tuple(factors)))
        expected = np.abs(np.subtract.outer(range(5), range(5))) <= 1
        assert np.array_equal(pattern, expected)

    def test_dense_oracle_on_random_graph(self):
        rng = np.random.default_rng(3)
        graph = polynomial_test_graph(6, rng)
        expectations = []
        for f in graph.factors:
            k = f.arity
            mean = rng.standard_normal(k)
            a = rng.standard_normal((k, k))
            expectations.append(factor_expectations(f, (mean, a @ a.T + np.eye(k)), SPEC))
        g, h = assemble(graph, expectations)
        # dense scatter with explicit projection matrices
        g_dense = np.zeros(6)
        h_dense = np.zeros((6, 6))
        for f, (gk, hk) in zip(graph.factors, expectations):
            p = np.zeros((f.arity, 6))
            for row, idx in enumerate(f.indices):
                p[row, idx] = 1.0
            g_dense += p.T @ gk
            h_dense += p.T @ hk @ p
        assert np.abs(g - g_dense).max() < 1e-12
        assert np.abs(h - h_dense).max() < 1e-12


class TestMarginals:
    def test_diagonal_information(self):
        factors = tuple(prior_factor(i, 0.0, 1.0) for i in range(4))
        graph = FactorGraph(4, factors)
        info = np.diag([2.0, 4.0, 8.0, 16.0])
        state = GaussianState(np.zeros(4), info, fill_pattern(graph))
        for i, (mean_k, cov_k) in enumerate(marginals_for_factors(state, graph)):
            assert cov_k[0, 0] == pytest.approx(1.0 / info[i, i], rel=1e-12)

    def test_three_variable_chain_blocks(self):
        factors = (prior_factor(0, 0.0, 1.0), odom_factor(0, 1, 0, 1), odom_factor(1, 2, 0, 1))
        graph = FactorGraph(3, factors)
        info = np.array([[2.0, -0.5, 0.0], [-0.5, 3.0, -0.8], [0.0, -0.8, 1.5]])
        state = GaussianState(np.arange(3.0), info, fill_pattern(graph))
        sigma = np.linalg.inv(info)
        for f, (mean_k, cov_k) in zip(graph.factors, marginals_for_factors(state, graph)):
            idx = list(f.indices)
            assert np.allclose(mean_k, state.mean[idx])
            assert np.allclose(cov_k, sigma[np.ix_(idx, idx)], rtol=1e-12, atol=1e-14)

    def test_fifty_variable_chain_sweep_equals_dense(self):
        rng = np.random.default_rng(4)
        n = 50
        factors = [prior_factor(0, 0.0, 1.0)]
        factors += [odom_factor(i, i + 1, 0.0, 1.0) for i in range(n - 1)]
        graph = FactorGraph(n, tuple(factors))
        diag = rng.uniform(2.0, 5.0, n)
        off = rng.uniform(-0.8, 0.8, n - 1)
        info = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        state = GaussianState(rng.standard_normal(n), info, fill_pattern(graph))
        sweep = marginals_for_factors(state, graph, sparse=True)
        dense = marginals_for_factors(state, graph, sparse=False)
        for (m1, c1), (m2, c2) in zip(sweep, dense):
            assert np.abs(m1 - m2).max() == 0.0
            assert np.abs(c1 - c2).max() < 1e-10

    def test_non_spd_raises_with_minor(self):
        factors = (prior_factor(0, 0.0, 1.0), odom_factor(0, 1, 0, 1))
        graph = FactorGraph(2, factors)
        with pytest.raises(NonSPD) as err:
            GaussianState(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]),
                          fill_pattern(graph))
        assert err.value.minor == 2


class TestDenseStep:
    def test_quadratic_single_step_exact(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 3))
        info_true = a @ a.T + np.eye(3)
        mean_true = rng.standard_normal(3)
        p = BayesElement(
            3,
            phi=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x - mean_true, info_true,
                                          x - mean_true),
            grad=lambda x: (x - mean_true) @ info_true,
            hess=lambda x: np.broadcast_to(info_true, (x.shape[0], 3, 3)).copy())
        state = GaussianState(np.zeros(3), np.eye(3))
        new = gvi_step_dense(p, state, gh_spec(4))
        assert np.abs(new.mean - mean_true).max() < 1e-12
        assert np.abs(new.info - info_true).max() < 1e-12

    def test_stereo_matches_subspace_iteration(self, stereo):
        opts = IterateOptions(tol=0.0, max_iters=6, quad=gh_spec(20),
                              kl_grid=reporting_grid(stereo.prior_measure))
        trace = iterate(stereo.posterior, GaussianSubspace(), stereo.prior_measure, opts)
        state = GaussianState(stereo.prior_measure.mean, np.array([[1.0 / 9.0]]))
        for ig in trace.gaussians:
            state = gvi_step_dense(stereo.posterior, state, gh_spec(20))
            assert np.abs(state.mean - ig.mean_like).max() < 1e-10
            assert np.abs(state.info - ig.info).max() < 1e-10

    def test_two_dimensional_toy_matches_fd_oracle(self):
        def residual(x):
            return np.stack([x[:, 0] + 0.2 * np.sin(x[:, 1]), 0.8 * x[:, 1] - 0.5], axis=-1)

        p = BayesElement(2, phi=lambda x: 0.5 * np.sum(residual(x) ** 2, axis=-1))
        nu = GaussianMeasure([0.3, -0.2], [[0.5, 0.1], [0.1, 0.4]])
        g, h = expected_derivatives(p, nu, gh_spec(10))
        # finite-difference oracle on a dense lattice of the same measure
        from bayespace.quadrature import measure_nodes
        points, w = measure_nodes(nu, gh_spec(10))
        eps = 1e-6
        g_fd = np.zeros(2)
        for j in range(2):
            up, dn = points.copy(), points.copy()
            up[:, j] += eps
            dn[:, j] -= eps
            g_fd[j] = w @ (p.phi(up) - p.phi(dn)) / (2 * eps)
        assert np.allclose(g, g_fd, rtol=1e-4, atol=1e-6)
        assert np.abs(h - h.T).max() < 1e-8


class TestSolverEquivalence:
    def test_sparse_equals_dense_six_variables(self):
        rng = np.random.default_rng(6)
        graph = polynomial_test_graph(6, rng)
        init = GaussianState(rng.standard_normal(6) * 0.3,
                             np.diag(np.full(6, 0.5)), fill_pattern(graph))
        opts = GviOptions(tol=0.0, max_iters=8, quad=gh_spec(6), record_loss=False)
        sparse = gvi_sparse_solve(graph, init, opts)
        dense = gvi_dense_solve(graph, init, opts)
        for a, b in zip(sparse.coordinates, dense.coordinates):
            assert np.abs(a - b).max() < 1e-10
        for a, b in zip(sparse.gaussians, dense.gaussians):
            assert np.abs(a.info - b.info).max() < 1e-10

    def test_sparse_equals_joint_dense_step(self):
        # polynomial factors keep both quadrature routes exact, isolating the
        # factorization/assembly path from quadrature error
        rng = np.random.default_rng(7)
        graph = polynomial_test_graph(6, rng)
        joint = graph.joint_element()
        init_mean = rng.standard_normal(6) * 0.3
        init = GaussianState(init_mean, np.diag(np.full(6, 0.5)), fill_pattern(graph))
        opts = GviOptions(tol=0.0, max_iters=5, quad=gh_spec(6), record_loss=False)
        sparse = gvi_sparse_solve(graph, init, opts)
        state = GaussianState(init_mean, np.diag(np.full(6, 0.5)))
        for step in range(5):
            state = gvi_step_dense(joint, state, gh_spec(6))
            assert np.abs(state.mean - sparse.coordinates[step]).max() < 1e-10
            assert np.abs(state.info - sparse.gaussians[step].info).max() < 1e-10

    def test_stereo_as_one_variable_graph(self, stereo):
        cfg = stereo.config
        graph = FactorGraph(1, (prior_factor(0, cfg.mu_p, cfg.s2_p),
                                stereo_factor(0, stereo.z, cfg.f, cfg.b, cfg.s2_r)))
        init = GaussianState(np.array([cfg.mu_p]), np.array([[1.0 / cfg.s2_p]]),
                             fill_pattern(graph))
        opts = GviOptions(tol=0.0, max_iters=6, quad=gh_spec(20), record_loss=False)
        trace = gvi_sparse_solve(graph, init, opts)
        state = GaussianState(np.array([cfg.mu_p]), np.array([[1.0 / cfg.s2_p]]))
        for step in range(6):
            state = gvi_step_dense(stereo.posterior, state, gh_spec(20))
            assert np.abs(state.mean - trace.coordinates[step]).max() < 1e-10
            assert np.abs(state.info - trace.gaussians[step].info).max() < 1e-10


class TestSumOfProjections:
    def test_joint_projection_equals_factor_accumulation(self):
        # the projection of the sum is the sum of the (marginal) projections
        rng = np.random.default_rng(8)
        for trial in range(20):
            n = int(rng.integers(2, 9))
            graph = polynomial_test_graph(n, rng)
            a = rng.standard_normal((n, n)) * 0.2
            cov = a @ a.T + np.eye(n) * rng.uniform(0.3, 1.0)
            nu = GaussianMeasure(rng.standard_normal(n) * 0.5, cov)
            g_joint, h_joint = expected_derivatives(graph.joint_element(), nu, gh_spec(5))
            expectations = []
            for f in graph.factors:
                idx = list(f.indices)
                marg = (nu.mean[idx], nu.covariance[np.ix_(idx, idx)])
                expectations.append(factor_expectations(f, marg, gh_spec(5)))
            g_acc, h_acc = assemble(graph, expectations)
            scale = max(1.0, np.abs(h_joint).max())
            assert np.abs(g_joint - g_acc).max() < 1e-10 * scale
            assert np.abs(h_joint - h_acc).max() < 1e-10 * scale


class TestChainSolves:
    def test_linear_chain_single_step_matches_exact_smoother(self):
        cfg = ExperimentConfig(seed=7, linear=True, n_poses=12, n_landmarks=3)
        graph, truth, init = make_chain(cfg)
        opts = GviOptions(tol=1e-10, max_iters=5, quad=gh_spec(10), record_loss=False)
        trace = gvi_sparse_solve(graph, init, opts)
        # normal-equations oracle: every factor is 0.5 (a^T x - b)^2 / w
        n = graph.num_vars
        a_rows, b_vals, w_vals = [], [], []
        for f in graph.factors:
            row = np.zeros(n)
            if f.kind == "prior":
                row[f.indices[0]] = 1.0
                b_vals.append(f.params[0])
                w_vals.append(f.params[1])
            else:
                row[f.indices[0]] = -1.0
                row[f.indices[1]] = 1.0
                b_vals.append(f.params[0])
                w_vals.append(f.params[1])
            a_rows.append(row)
        a = np.array(a_rows)
        w_inv = np.diag(1.0 / np.array(w_vals))
        info = a.T @ w_inv @ a
        mean = np.linalg.solve(info, a.T @ w_inv @ np.array(b_vals))
        assert np.abs(trace.coordinates[0] - mean).max() < 1e-10
        assert np.abs(trace.gaussians[0].info - info).max() < 1e-10
        assert trace.converged and trace.iterations <= 2

    def test_nonlinear_chain_sparse_equals_dense(self):
        cfg = ExperimentConfig(seed=3)
        graph, truth, init = make_chain(cfg)
        opts = GviOptions(quad=gh_spec(10), record_loss=False)
        sparse = gvi_sparse_solve(graph, init, opts)
        dense = gvi_dense_solve(graph, init, opts)
        assert sparse.iterations == dense.iterations
        for a, b in zip(sparse.coordinates, dense.coordinates):
            assert np.abs(a - b).max() < 1e-10

    def test_pattern_never_grows(self):
        cfg = ExperimentConfig(seed=5)
        graph, truth, init = make_chain(cfg)
        pattern = fill_pattern(graph)
        trace = gvi_sparse_solve(graph, init, GviOptions(record_loss=False))
        for ig in trace.gaussians:
            assert np.abs(ig.info[~pattern]).max() == 0.0

    def test_monte_carlo_consistency_linear_chain(self):
        inside = 0
        total = 0
        for trial in range(500):
            cfg = ExperimentConfig(seed=1234, linear=True)
            graph, truth, init = make_chain(cfg, trial)
            trace = gvi_sparse_solve(graph, init,
                                     GviOptions(max_iters=5, record_loss=False))
            est = trace.coordinates[-1]
            sig = np.sqrt(np.diag(trace.measures[-1].covariance))
            inside += int(np.sum(np.abs(est - truth) <= 3.0 * sig))
            total += truth.size
        assert 0.985 <= inside / total <= 0.999

    def test_non_spd_mid_run_aborts_with_partial_trace(self):
        concave = Factor(
            indices=(0,),
            phi=lambda x: -0.5 * x[:, 0] ** 2,
            grad=lambda x: -x,
            hess=lambda x: np.full((x.shape[0], 1, 1), -1.0))
        graph = FactorGraph(1, (concave,))
        init = GaussianState(np.zeros(1), np.eye(1), fill_pattern(graph))
        with pytest.raises(NonSPD) as err:
            gvi_sparse_solve(graph, init, GviOptions(record_loss=False))
        trace = err.value.trace
        assert trace.aborted is not None
        assert trace.iterations == 0
