import numpy as np
import pytest

from pintuq.core import SolverConfig, make_time_grid
from pintuq.models import AdvectionDiffusion2D, Burgers1D, Diffusion1D
from pintuq.parareal import coarse_sweep_init, fine_reference, random_guess_init
from pintuq.pcgc import (
    assemble_rhs_blocks,
    build_alpha_circulant,
    cgc_correct,
    forward_dft,
    inverse_dft,
    pcgc_solve,
    three_step_solve,
)
from pintuq.core import CoarseTrajectory, RngStream

from conftest import ScalarDecay, sample
from oracles import dense_all_at_once_solve, naive_dft_matrix, sequential_alpha_elimination


class TestAlphaCirculant:
    def test_single_interval(self):
        spec = build_alpha_circulant(1, 0.5)
        assert spec.eigenvalues[0] == pytest.approx(0.5, abs=1e-15)

    def test_two_by_two_characteristic_roots(self):
        spec = build_alpha_circulant(2, 0.25)
        got = np.sort(spec.eigenvalues.real)
        oracle = np.sort(np.linalg.eigvals(np.array([[1.0, -0.25], [-1.0, 1.0]])).real)
        np.testing.assert_allclose(got, oracle, atol=1e-14)
        np.testing.assert_allclose(got, [0.5, 1.5], atol=1e-14)
        assert np.max(np.abs(spec.eigenvalues.imag)) < 1e-15

    def test_product_is_determinant(self):
        spec = build_alpha_circulant(4, 0.1)
        det_oracle = np.linalg.det(spec.dense_matrix())
        assert np.prod(spec.eigenvalues) == pytest.approx(det_oracle, rel=1e-12)
        assert det_oracle == pytest.approx(0.9, rel=1e-12)

    @pytest.mark.parametrize("n", [2, 4, 8, 16, 32])
    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.5])
    def test_eigendecomposition_residual(self, n, alpha):
        spec = build_alpha_circulant(n, alpha)
        V = spec.eigenvector_matrix()
        Vinv = spec.inverse_eigenvector_matrix()
        np.testing.assert_allclose(V @ Vinv, np.eye(n), atol=1e-12)
        R = V @ np.diag(spec.eigenvalues) @ Vinv
        assert np.max(np.abs(R - spec.dense_matrix())) <= 1e-12

    @pytest.mark.parametrize("n", [2, 8, 33, 64])
    def test_conditioning_formula(self, n):
        alpha = 0.1
        spec = build_alpha_circulant(n, alpha)
        cond = np.linalg.cond(spec.eigenvector_matrix())
        assert cond == pytest.approx(alpha ** (-(n - 1) / n), rel=1e-10)
        assert cond <= 1.0 / alpha + 1e-6

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_alpha_outside_open_interval(self, alpha):
        with pytest.raises(ValueError):
            build_alpha_circulant(4, alpha)


class TestBlockDft:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(8, 5)) + 1j * rng.normal(size=(8, 5))
        np.testing.assert_allclose(inverse_dft(forward_dft(v)), v, atol=1e-13)

    def test_single_block_is_identity(self):
        v = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_allclose(forward_dft(v), v, atol=1e-15)

    def test_against_naive_dft(self):
        n, nx = 4, 3
        F = naive_dft_matrix(n)
        rng = np.random.default_rng(1)
        v = rng.normal(size=(n, nx))
        np.testing.assert_allclose(forward_dft(v), F @ v, atol=1e-13)
        np.testing.assert_allclose(inverse_dft(v), F.conj().T @ v, atol=1e-13)
        # unit block vectors as in a column-by-column check
        for j in range(n):
            e = np.zeros((n, nx))
            e[j] = 1.0
            np.testing.assert_allclose(forward_dft(e), F @ e, atol=1e-13)


class TestThreeStepSolve:
    def test_hand_2x2(self):
        # zero Jacobian, alpha = 0.5: [[1, -0.5], [-1, 1]] u = (1, 0)
        spec = build_alpha_circulant(2, 0.5)
        u, imag = three_step_solve(spec, np.zeros((1, 1)), 0.3, np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(u, [[2.0], [2.0]], atol=1e-12)
        assert imag < 1e-12

    def test_zero_rhs(self):
        spec = build_alpha_circulant(5, 0.1)
        u, _ = three_step_solve(spec, np.array([[-2.0]]), 0.1, np.zeros((5, 1)))
        np.testing.assert_array_equal(u, np.zeros((5, 1)))

    def test_scalar_blocks_against_dense(self):
        spec = build_alpha_circulant(8, 0.1)
        rng = np.random.default_rng(7)
        r = rng.normal(size=(8, 1))
        u, _ = three_step_solve(spec, np.array([[-3.0]]), 0.1, r)
        expected = dense_all_at_once_solve(spec, np.array([[-3.0]]), 0.1, r)
        np.testing.assert_allclose(u, expected, rtol=1e-10)

    @pytest.mark.parametrize("trial", range(12))
    def test_randomized_equivalence_with_dense_solve(self, trial):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(1, 9))
        nx = int(rng.integers(1, 17))
        alpha = float(rng.uniform(0.02, 0.9))
        deltaT = float(rng.uniform(0.01, 1.0))
        spec = build_alpha_circulant(n, alpha)
        # dissipative-looking random Jacobian
        J = rng.normal(size=(nx, nx)) - 3.0 * np.eye(nx)
        r = rng.normal(size=(n, nx))
        u, imag = three_step_solve(spec, J, deltaT, r)
        expected = dense_all_at_once_solve(spec, J, deltaT, r)
        scale = max(np.max(np.abs(expected)), 1e-30)
        assert np.max(np.abs(u - expected)) / scale <= 1e-9
        assert imag <= 1e-10 * max(np.max(np.abs(u)), 1.0)

    def test_block_count_mismatch(self):
        spec = build_alpha_circulant(4, 0.1)
        with pytest.raises(ValueError):
            three_step_solve(spec, np.zeros((1, 1)), 0.1, np.zeros((3, 1)))


@pytest.fixture(scope="module")
def linear_setup():
    model = AdvectionDiffusion2D(h=1 / 10)
    grid = make_time_grid(1.0, 8, 10)
    xi = sample(3.1)
    cfg = SolverConfig(seed=2, alpha=0.1, max_outer_iters=40)
    ref = fine_reference(model, xi, grid, cfg)
    return model, grid, xi, cfg, ref


class TestCgcCorrect:
    def test_matches_sequential_elimination(self, linear_setup):
        model, grid, xi, cfg, ref = linear_setup
        from pintuq.propagators import propagate_fine

        prev = random_guess_init(model, xi, grid, RngStream(6))
        from_states = np.vstack([ref.initial, prev.states[:-1]])
        fine_ends = np.array(
            [
                propagate_fine(model, from_states[n], grid.coarse_point(n),
                               grid.coarse_point(n + 1), grid, xi, cfg)
                for n in range(grid.n_coarse)
            ]
        )
        corrected, diag = cgc_correct(model, xi, grid, cfg, prev, fine_ends)
        b = assemble_rhs_blocks(model, xi, grid, cfg, prev.states, fine_ends)
        oracle = sequential_alpha_elimination(model, xi, grid, cfg.alpha, b)
        scale = np.max(np.abs(oracle))
        assert np.max(np.abs(corrected.states - oracle)) / scale <= 1e-10

    def test_fixed_point(self, linear_setup):
        model, grid, xi, cfg, ref = linear_setup
        from pintuq.propagators import propagate_fine

        from_states = np.vstack([ref.initial, ref.states[:-1]])
        fine_ends = np.array(
            [
                propagate_fine(model, from_states[n], grid.coarse_point(n),
                               grid.coarse_point(n + 1), grid, xi, cfg)
                for n in range(grid.n_coarse)
            ]
        )
        corrected, _ = cgc_correct(model, xi, grid, cfg, ref.copy(), fine_ends)
        assert np.max(np.abs(corrected.states - ref.states)) <= 1e-10

    def test_scalar_hand_system(self, cfg):
        # u' = -u, dT = 0.5, alpha = 0.1, hand-set rhs blocks:
        # [[1.5, -0.1], [-1, 1.5]] U = 1.5 * b
        model = ScalarDecay()
        xi = sample(1.0)
        grid = make_time_grid(1.0, 2, 2)
        scfg = SolverConfig(alpha=0.1, seed=0)
        b = np.array([[0.8], [-0.3]])
        prev = CoarseTrajectory(np.ones(1), np.zeros((2, 1)))
        # with U_prev = 0 and zero source, assemble_rhs_blocks returns exactly
        # fine_ends, so hand-set fine_ends realize the hand-set b
        corrected, _ = cgc_correct(model, xi, grid, scfg, prev, b.copy())
        M = np.array([[1.5, -0.1], [-1.0, 1.5]])
        oracle = np.linalg.solve(M, 1.5 * b)
        np.testing.assert_allclose(corrected.states, oracle, atol=1e-12)


class TestPcgcSolve:
    def test_converges_to_fine_reference(self, linear_setup):
        model, grid, xi, cfg, ref = linear_setup
        init = random_guess_init(model, xi, grid, RngStream(8))
        trace = pcgc_solve(model, xi, grid, cfg, init, reference=ref, stop_on="reference")
        assert trace.converged
        assert np.max(np.abs(trace.trajectory.states - ref.states)) <= cfg.tol

    def test_imaginary_leakage_tracked_and_small(self, linear_setup):
        model, grid, xi, cfg, ref = linear_setup
        init = coarse_sweep_init(model, xi, grid, cfg)
        trace = pcgc_solve(model, xi, grid, cfg, init, reference=ref, stop_on="reference")
        leak = trace.diagnostics["max_imag_residue"]
        assert leak <= 1e-10 * max(np.max(np.abs(trace.trajectory.states)), 1.0)

    def test_nonlinear_burgers_converges(self, cfg):
        model = Burgers1D(dx=1 / 50)
        xi = sample(2.0)
        grid = make_time_grid(2.0, 10, 10)
        scfg = SolverConfig(seed=4, alpha=0.1, max_outer_iters=40)
        ref = fine_reference(model, xi, grid, scfg)
        init = coarse_sweep_init(model, xi, grid, scfg)
        trace = pcgc_solve(model, xi, grid, scfg, init, reference=ref, stop_on="reference")
        assert trace.converged
        assert np.max(np.abs(trace.trajectory.states - ref.states)) <= scfg.tol

    def test_contraction_bounded_by_alpha_factor(self):
        from pintuq.convergence import k_alpha_bound, model_spectrum, weighted_inf_norm

        model = Diffusion1D(h=1 / 32)
        grid = make_time_grid(1.0, 10, 8)
        xi = sample(1.4)
        scfg = SolverConfig(seed=9, alpha=0.1, max_outer_iters=40)
        ref = fine_reference(model, xi, grid, scfg)
        spectrum = model_spectrum(model, xi, grid)
        bound = k_alpha_bound(spectrum.z, grid.n_fine_per_coarse, scfg.alpha)
        init = random_guess_init(model, xi, grid, RngStream(10))
        trace = pcgc_solve(
            model, xi, grid, scfg, init, reference=ref, stop_on="reference",
            store_states=True,
        )
        errs = [
            weighted_inf_norm(s - ref.states, spectrum.transform)
            for s in trace.states_history
        ]
        for k in range(1, len(errs)):
            if errs[k - 1] <= 1e-13:
                break
            assert errs[k] / errs[k - 1] <= bound + 1e-6
