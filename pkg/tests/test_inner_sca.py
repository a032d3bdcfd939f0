import numpy as np
import pytest

from sisparrow import (Objective, SolverConfig, full_hermitian_structure,
                       inner_sca_q_update, psd_project, psd_sqrt)
from sisparrow.solvers import NotPositiveDefinite

from conftest import random_feasible_point, random_hermitian, random_spd


class TestPsdProject:
    def test_clamps_negative_eigenvalue(self):
        np.testing.assert_allclose(psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]),
                                   atol=1e-14)

    def test_psd_input_unchanged(self, rng):
        Z = random_spd(rng, 5)
        np.testing.assert_allclose(psd_project(Z), Z, atol=1e-12)

    def test_nearest_among_sampled_candidates(self, rng):
        X = random_hermitian(rng, 4)
        P = psd_project(X)
        d_opt = np.linalg.norm(X - P)
        w, E = np.linalg.eigh(P)
        for _ in range(50):
            Z = psd_project(P + 0.5 * random_hermitian(rng, 4))
            assert np.linalg.norm(X - Z) >= d_opt - 1e-10


class TestInnerDescent:
    def test_converges_to_closed_form_on_unstructured_space(self, rng):
        # with no structural ties the minimizer is sqrt(M) R^{1/2} - lam I
        for trial in range(3):
            m = int(rng.integers(3, 9))
            R = random_spd(rng, m)
            lam = float(rng.uniform(0.2, 1.5))
            s = full_hermitian_structure(m)
            obj = Objective(R=R, lam=lam, structure=s)
            cfg = SolverConfig(eta=1e-8, max_inner=400)
            Q, info = inner_sca_q_update(obj, None, 0.0, cfg, np.zeros((m, m)))
            target = np.sqrt(m) * psd_sqrt(R) - lam * np.eye(m)
            rel = np.linalg.norm(Q - target) / np.linalg.norm(target)
            assert rel <= 1e-6
            assert info.converged

    def test_stationary_start_returns_immediately(self, rng):
        m = 5
        R = random_spd(rng, m)
        lam = 0.8
        s = full_hermitian_structure(m)
        obj = Objective(R=R, lam=lam, structure=s)
        Q_star = np.sqrt(m) * psd_sqrt(R) - lam * np.eye(m)
        Q, info = inner_sca_q_update(obj, None, 0.0, SolverConfig(), Q_star)
        assert info.iterations == 0
        assert info.converged
        np.testing.assert_array_equal(Q, Q_star)

    def test_monotone_decrease(self, small_structure, rng):
        s = small_structure
        R = random_spd(rng, s.M)
        lam, rho = 0.6, 1.2
        obj = Objective(R=R, lam=lam, structure=s)
        anchor = s.project(random_hermitian(rng, s.M))
        Q0 = random_feasible_point(rng, s, lam)
        values = []
        Q = Q0
        cfg = SolverConfig(eta=1e-10, max_inner=1)
        for _ in range(25):
            values.append(obj.value(Q, rho, anchor))
            Q, info = inner_sca_q_update(obj, anchor, rho, cfg, Q)
            if info.converged and info.iterations == 0:
                break
        values.append(obj.value(Q, rho, anchor))
        diffs = np.diff(values)
        assert (diffs <= 1e-9 * np.maximum(1.0, np.abs(values[:-1]))).all()

    def test_iterates_stay_structured(self, small_structure, rng):
        s = small_structure
        obj = Objective(R=random_spd(rng, s.M), lam=0.6, structure=s)
        Q0 = random_feasible_point(rng, s, 0.6)
        Q, _ = inner_sca_q_update(obj, None, 0.0, SolverConfig(eta=1e-8), Q0)
        assert s.is_exact_member(Q)
        assert np.linalg.eigvalsh(Q + 0.6 * np.eye(s.M)).min() > 0

    def test_infeasible_start_raises(self, small_structure, rng):
        obj = Objective(R=random_spd(rng, small_structure.M), lam=0.5,
                        structure=small_structure)
        with pytest.raises(NotPositiveDefinite):
            inner_sca_q_update(obj, None, 0.0, SolverConfig(),
                               -np.eye(small_structure.M))

    def test_reports_gradient_norm(self, small_structure, rng):
        obj = Objective(R=random_spd(rng, small_structure.M), lam=0.5,
                        structure=small_structure)
        Q0 = random_feasible_point(rng, small_structure, 0.5)
        _, info = inner_sca_q_update(obj, None, 0.0, SolverConfig(eta=1e-9), Q0)
        assert np.isfinite(info.grad_norm)
        assert info.grad_norm <= np.sqrt(small_structure.n_classes) * 1e-9
