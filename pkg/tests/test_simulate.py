import numpy as np
import pytest

from sisparrow import (ArrayGeometry, SourceScenario, default_loading, diagonal_load,
                       sample_covariance, simulate, snr_db_to_noise_var,
                       steering_vector)

from conftest import SCENARIO_MU_X, SCENARIO_MU_Y


class TestScenario:
    def test_pairwise_zero_correlation_gives_identity(self):
        sc = SourceScenario.pairwise(SCENARIO_MU_X, SCENARIO_MU_Y, corr=0.0, snapshots=3)
        np.testing.assert_array_equal(sc.P, np.eye(2))

    def test_pairwise_correlation(self):
        sc = SourceScenario.pairwise(SCENARIO_MU_X, SCENARIO_MU_Y, corr=0.99, snapshots=3)
        assert sc.P[0, 1] == pytest.approx(0.99)
        assert sc.P[1, 0] == pytest.approx(0.99)

    def test_complex_correlation_is_hermitian(self):
        sc = SourceScenario.pairwise(SCENARIO_MU_X, SCENARIO_MU_Y, corr=0.3 + 0.4j, snapshots=3)
        assert sc.P[1, 0] == pytest.approx(np.conj(sc.P[0, 1]))
        assert np.linalg.eigvalsh(sc.P).min() >= -1e-12

    def test_rejects_duplicate_frequencies(self):
        with pytest.raises(ValueError):
            SourceScenario.pairwise([0.5, 0.5], [1.0, 1.0], snapshots=1)

    def test_rejects_excess_correlation(self):
        with pytest.raises(ValueError):
            SourceScenario.pairwise([0.5, 0.8], [1.0, 1.1], corr=1.2, snapshots=1)

    def test_snr_conversion(self):
        assert snr_db_to_noise_var(0.0) == pytest.approx(1.0)
        assert snr_db_to_noise_var(10.0) == pytest.approx(0.1)


class TestSimulate:
    def test_noiseless_single_source_single_snapshot_is_scaled_steering(self):
        geom = ArrayGeometry.uniform(2, 1, 2, 2, Delta_x=[0.0, 9.0], Delta_y=[0.0])
        sc = SourceScenario(mu_x=[0.4], mu_y=[-0.9], P=np.eye(1), snapshots=1,
                            noise_var=0.0, seed=5)
        meas = simulate(geom, sc)
        a = steering_vector(geom, 0.4, -0.9)
        ratio = meas.Y[:, 0] / a
        np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)

    def test_benchmark_scenario_dimensions(self, scenario_geometry):
        sc = SourceScenario.pairwise(SCENARIO_MU_X, SCENARIO_MU_Y, corr=0.0, snapshots=5,
                                     noise_var=1.0, seed=1)
        meas = simulate(scenario_geometry, sc)
        assert meas.Y.shape == (32, 5)
        assert meas.R_hat.shape == (32, 32)
        assert scenario_geometry.Delta_x[1] == scenario_geometry.Lx + 49
        assert scenario_geometry.Delta_y[1] == scenario_geometry.Ly + 49

    def test_seed_reproducibility(self, scenario_geometry):
        sc = SourceScenario.pairwise(SCENARIO_MU_X, SCENARIO_MU_Y, corr=0.5, snapshots=4,
                                     noise_var=0.5, seed=77)
        y1 = simulate(scenario_geometry, sc).Y
        y2 = simulate(scenario_geometry, sc).Y
        assert np.array_equal(y1, y2)

    def test_unknown_geometry_refused(self):
        geom = ArrayGeometry.uniform(2, 1, 2, 1, Delta_x=None, Delta_y=[0.0])
        sc = SourceScenario(mu_x=[0.4], mu_y=[0.2], P=np.eye(1), snapshots=1,
                            noise_var=0.1)
        with pytest.raises(ValueError, match="unknown"):
            simulate(geom, sc)

    def test_failed_sensors_reduce_covariance(self):
        geom = ArrayGeometry.uniform(2, 1, 2, 2, Delta_x=[0.0, 9.0], Delta_y=[0.0],
                                     failed_sensors=(1, 5))
        sc = SourceScenario(mu_x=[0.4], mu_y=[0.2], P=np.eye(1), snapshots=10,
                            noise_var=0.1, seed=2)
        meas = simulate(geom, sc)
        assert meas.Y.shape[0] == 8
        assert meas.R_hat.shape == (6, 6)
        np.testing.assert_array_equal(meas.observable_indices, [0, 2, 3, 4, 6, 7])

    def test_waveform_covariance_converges(self, scenario_geometry):
        # empirical second moments over 1e5 snapshots within 2 percent
        sc = SourceScenario.pairwise([0.5, 0.8], [1.5, 1.2], corr=0.6, snapshots=100000,
                                     noise_var=0.25, seed=9)
        geom = ArrayGeometry.uniform(1, 1, 2, 1)  # M = 2 keeps it cheap
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(9)))
        from sisparrow.simulate import _cn_samples, _hermitian_sqrt
        waves = _hermitian_sqrt(sc.P) @ _cn_samples(rng, (2, sc.snapshots))
        emp = waves @ waves.conj().T / sc.snapshots
        assert np.linalg.norm(emp - sc.P) <= 0.02 * np.linalg.norm(sc.P)
        noise = np.sqrt(sc.noise_var) * _cn_samples(rng, (geom.M, sc.snapshots))
        power = np.mean(np.abs(noise) ** 2)
        assert abs(power - sc.noise_var) <= 0.02 * sc.noise_var


class TestSampleCovariance:
    def test_unit_column(self):
        R = sample_covariance(np.array([[1.0], [0.0]], dtype=complex))
        np.testing.assert_allclose(R, [[1.0, 0.0], [0.0, 0.0]])

    def test_identity_snapshots(self):
        m = 5
        R = sample_covariance(np.eye(m, dtype=complex))
        np.testing.assert_allclose(R, np.eye(m) / m)

    def test_positive_semidefinite(self, rng):
        Y = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
        R = sample_covariance(Y)
        assert np.linalg.eigvalsh(R).min() >= -1e-12 * np.linalg.norm(R)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sample_covariance(np.zeros((3, 0)))


class TestDiagonalLoading:
    def test_zero_matrix(self):
        np.testing.assert_allclose(diagonal_load(np.zeros((3, 3)), 1.0), np.eye(3))

    def test_rank_deficient_becomes_positive(self, rng):
        Y = rng.normal(size=(8, 3)) + 1j * rng.normal(size=(8, 3))
        R = sample_covariance(Y)
        iota = default_loading(R)
        assert iota == pytest.approx(1e-6 * np.trace(R).real / 8)
        loaded = diagonal_load(R, iota)
        # allowance for eigensolver rounding on the zero eigenvalues of R
        eig_noise = 1e-12 * np.linalg.norm(R)
        assert np.linalg.eigvalsh(loaded).min() >= iota * (1 - 1e-9) - eig_noise

    def test_zero_loading_is_identity_operation(self, rng):
        R = sample_covariance(rng.normal(size=(4, 10)) + 0j)
        np.testing.assert_array_equal(diagonal_load(R, 0.0), R)

    def test_negative_loading_rejected(self):
        with pytest.raises(ValueError):
            diagonal_load(np.eye(2), -0.1)
