import numpy as np
import pytest
from scipy.linalg import expm

from safefilter.pendulum import (
    TEST_CASES,
    PendulumParams,
    energy,
    exact_discretization,
    export_dataset,
    linearized_plant,
    load_dataset,
    rk4_step,
    step_true,
)


class TestStepTrue:
    def test_upright_equilibrium(self):
        params = PendulumParams()
        np.testing.assert_array_equal(step_true(np.zeros(2), 0.0, params), np.zeros(2))

    def test_matches_linear_flow_near_origin(self):
        # one noiseless step agrees with the matrix exponential of the
        # continuous linearization up to the cubic nonlinearity remainder
        params = PendulumParams()
        a_c = np.array([[0.0, 1.0], [params.gravity_gain, 0.0]])
        x0 = np.array([0.01, 0.0])
        x_rk4 = rk4_step(x0, 0.0, params)
        x_lin = expm(a_c * params.dt) @ x0
        assert np.abs(x_rk4 - x_lin).max() <= 1e-7

    def test_seeded_reproducibility(self):
        params = PendulumParams(sigma_w=0.1)
        x = np.array([0.3, -0.2])
        out1 = [
            step_true(x, 1.0, params, np.random.default_rng(42)) for _ in range(3)
        ]
        out2 = [
            step_true(x, 1.0, params, np.random.default_rng(42)) for _ in range(3)
        ]
        for a, b in zip(out1, out2):
            np.testing.assert_array_equal(a, b)

    def test_noise_requires_rng(self):
        with pytest.raises(ValueError):
            step_true(np.zeros(2), 0.0, PendulumParams(sigma_w=0.1))

    def test_energy_conservation_unforced(self):
        params = PendulumParams()
        x = np.array([2.0, 0.5])
        e_scale = abs(energy(x, params))
        for _ in range(200):
            x_next = rk4_step(x, 0.0, params)
            drift = abs(energy(x_next, params) - energy(x, params)) / e_scale
            assert drift <= 1e-6
            x = x_next


class TestLinearizedPlant:
    def test_published_entries(self):
        a, b = linearized_plant()
        np.testing.assert_array_equal(
            a, np.array([[1.0092, 0.05015], [0.369, 1.0092]])
        )
        np.testing.assert_array_equal(b, np.array([[0.00125], [0.05015]]))

    def test_agrees_with_exact_discretization(self):
        # each fixed entry is the exact value rounded at its printed precision
        a_fix, b_fix = linearized_plant()
        a_ex, b_ex = exact_discretization(PendulumParams())
        decimals_a = np.array([[4, 5], [3, 4]])
        decimals_b = np.array([[5], [5]])
        for (i, j), dec in np.ndenumerate(decimals_a):
            assert a_fix[i, j] == pytest.approx(a_ex[i, j], abs=0.5 * 10.0 ** (-dec))
        for (i, j), dec in np.ndenumerate(decimals_b):
            assert b_fix[i, j] == pytest.approx(b_ex[i, j], abs=0.5 * 10.0 ** (-dec))

    def test_input_column_nonzero(self):
        _, b = linearized_plant()
        assert np.linalg.norm(b) > 0.0


class TestTestCases:
    def test_table_rows(self):
        rows = [
            (1, (57.3, -120.3), 120.0, -50.0),
            (2, (-85.9, -85.9), -150.0, 40.0),
            (3, (-85.9, -114.6), -100.0, -180.0),
            (4, (85.9, 57.3), 100.0, 180.0),
        ]
        assert len(TEST_CASES) == 4
        for case, (cid, x0, r1, r2) in zip(TEST_CASES, rows):
            assert case.id == cid
            assert case.x0_deg == x0
            assert case.theta_ref1_deg == r1
            assert case.theta_ref2_deg == r2
            assert case.duration == 2.0

    def test_radian_conversion(self):
        case = TEST_CASES[0]
        np.testing.assert_allclose(case.x0, np.deg2rad([57.3, -120.3]))
        assert case.theta_ref1 == pytest.approx(np.deg2rad(120.0))


class TestDataset:
    def test_row_count_equals_duration_over_dt(self, tmp_path):
        params = PendulumParams()
        path = export_dataset(params, duration=15.0, seed=0, path=tmp_path / "d.csv")
        inputs, targets = load_dataset(path)
        assert inputs.shape == (300, 3)
        assert targets.shape == (300, 2)

    def test_residuals_near_zero_at_origin(self, tmp_path):
        # the residual target is exactly the RK4-vs-linear gap: zero at the
        # origin, so rows sampled near it must have small targets
        params = PendulumParams()
        a_lin, b_lin = linearized_plant()
        x = np.array([1e-3, 0.0])
        residual = rk4_step(x, 0.0, params) - a_lin @ x
        assert np.abs(residual).max() <= 1e-5

    def test_reload_identical(self, tmp_path):
        params = PendulumParams()
        p1 = export_dataset(params, duration=5.0, seed=3, path=tmp_path / "a.csv")
        p2 = export_dataset(params, duration=5.0, seed=3, path=tmp_path / "b.csv")
        assert p1.read_text() == p2.read_text()
        i1, t1 = load_dataset(p1)
        i2, t2 = load_dataset(p2)
        np.testing.assert_array_equal(i1, i2)
        np.testing.assert_array_equal(t1, t2)

    def test_targets_match_definition(self, tmp_path):
        params = PendulumParams()
        path = export_dataset(params, duration=2.0, seed=5, path=tmp_path / "c.csv")
        inputs, targets = load_dataset(path)
        a_lin, b_lin = linearized_plant()
        # spot-check consecutive rows that belong to one simulation segment
        x, u = inputs[0, :2], inputs[0, 2]
        expected = rk4_step(x, u, params) - a_lin @ x - b_lin[:, 0] * u
        np.testing.assert_allclose(targets[0], expected, atol=1e-12)
