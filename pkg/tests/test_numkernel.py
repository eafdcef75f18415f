import numpy as np
import pytest
import scipy.linalg

from jamopt.numkernel import (
    EventSpec,
    IntegrationError,
    SingularMatrixError,
    Trajectory,
    integrate_with_events,
    linear_solve,
    mat_exp,
)


class TestMatExp:
    def test_zero_matrix(self):
        np.testing.assert_array_equal(mat_exp(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent(self):
        np.testing.assert_allclose(
            mat_exp([[0.0, 1.0], [0.0, 0.0]]), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15
        )

    def test_diagonal(self):
        out = mat_exp(np.diag([1.0, -1.0]))
        np.testing.assert_allclose(np.diag(out), [np.e, 1.0 / np.e], rtol=1e-14)

    def test_against_scipy_oracle(self):
        # independent reference for random matrices up to norm 10
        rng = np.random.default_rng(1)
        for _ in range(40):
            n = int(rng.integers(1, 7))
            M = rng.standard_normal((n, n))
            M *= rng.uniform(0.1, 10.0) / max(np.linalg.norm(M, 2), 1e-12)
            expected = scipy.linalg.expm(M)
            got = mat_exp(M)
            err = np.linalg.norm(got - expected) / np.linalg.norm(expected)
            assert err <= 1e-12

    def test_inverse_property(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(1, 6))
            M = rng.standard_normal((n, n))
            M *= rng.uniform(0.1, 5.0) / max(np.linalg.norm(M, 2), 1e-12)
            prod = mat_exp(M) @ mat_exp(-M)
            assert np.linalg.norm(prod - np.eye(n)) <= 1e-10

    def test_semigroup_property(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            n = int(rng.integers(1, 6))
            M = rng.standard_normal((n, n))
            M *= rng.uniform(0.1, 2.0) / max(np.linalg.norm(M, 2), 1e-12)
            s, t = rng.uniform(0.1, 1.5, size=2)
            lhs = mat_exp(M * (s + t))
            rhs = mat_exp(M * s) @ mat_exp(M * t)
            assert np.linalg.norm(lhs - rhs) <= 1e-10

    def test_overflow_guard(self):
        with pytest.raises(IntegrationError, match="overflow"):
            mat_exp(np.array([[2000.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            mat_exp(np.ones((2, 3)))


class TestLinearSolve:
    def test_identity(self):
        np.testing.assert_array_equal(linear_solve(np.eye(2), [1.0, 2.0]), [1.0, 2.0])

    def test_diagonal(self):
        np.testing.assert_allclose(
            linear_solve([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0]
        )

    def test_singular_raises(self):
        with pytest.raises(SingularMatrixError, match="singular"):
            linear_solve([[1.0, 1.0], [2.0, 2.0]], [1.0, 0.0])

    def test_residual_bound_random(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            M = rng.standard_normal((n, n)) + n * np.eye(n)
            if np.linalg.cond(M) > 1e8:
                continue
            b = rng.standard_normal(n)
            x = linear_solve(M, b)
            resid = np.linalg.norm(M @ x - b)
            bound = 1e-10 * (
                np.linalg.norm(M) * np.linalg.norm(x) + np.linalg.norm(b)
            )
            assert resid <= bound

    def test_matches_numpy(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((6, 6)) + 3 * np.eye(6)
        b = rng.standard_normal(6)
        np.testing.assert_allclose(linear_solve(M, b), np.linalg.solve(M, b), rtol=1e-9)


class TestIntegrator:
    def test_constant_field(self):
        traj = integrate_with_events(
            lambda t, x: np.zeros(2), 0.0, 1.0, np.array([3.0, -1.0]), step=0.01
        )
        np.testing.assert_array_equal(traj.states[-1], [3.0, -1.0])
        assert traj.switch_times.size == 0
        assert traj.times[0] == 0.0 and traj.times[-1] == 1.0

    def test_exponential_growth(self):
        traj = integrate_with_events(
            lambda t, x: x, 0.0, 1.0, np.array([1.0]), step=1e-3
        )
        assert abs(traj.states[-1, 0] - np.e) <= 1e-8

    def test_linear_crossing_up(self):
        surface = EventSpec(surface=lambda t, x: float(x[0]), direction="up")
        traj = integrate_with_events(
            lambda t, x: np.ones(1), 0.0, 1.0, np.array([-0.5]), events=[surface],
            step=1e-3,
        )
        assert traj.switch_times.shape == (1,)
        assert abs(traj.switch_times[0] - 0.5) <= 1e-10

    def test_direction_filter(self):
        # x oscillates; only down-crossings of x should fire
        field = lambda t, x: np.array([np.cos(t)])
        ev = EventSpec(surface=lambda t, x: float(x[0]), direction="down")
        traj = integrate_with_events(
            field, 0.0, 7.0, np.array([0.0]), events=[ev], step=1e-3
        )
        # sin(t) crosses downward only at pi (2pi excluded: sin rises there)
        assert traj.switch_times.shape == (1,)
        assert abs(traj.switch_times[0] - np.pi) <= 1e-8

    def test_reproduces_matrix_exponential(self):
        rng = np.random.default_rng(6)
        M = rng.standard_normal((3, 3))
        M *= 2.0 / np.linalg.norm(M, 2)
        x0 = rng.standard_normal(3)
        traj = integrate_with_events(lambda t, x: M @ x, 0.0, 1.5, x0, step=1.5 / 2000)
        expected = mat_exp(M * 1.5) @ x0
        assert np.linalg.norm(traj.states[-1] - expected) <= 10 * 1e-4

    def test_event_sample_inserted(self):
        ev = EventSpec(surface=lambda t, x: float(x[0]) - 0.333, direction="up")
        traj = integrate_with_events(
            lambda t, x: np.ones(1), 0.0, 1.0, np.array([0.0]), events=[ev], step=0.1
        )
        # sample exactly at the switch, strictly increasing times
        assert np.any(np.isclose(traj.times, traj.switch_times[0]))
        assert np.all(np.diff(traj.times) > 0)
        assert traj.times.shape[0] == 11 + traj.switch_times.shape[0]

    def test_localization_refinement(self):
        # tightening the bisection tolerance 10x shrinks worst-case error >= 5x
        rng = np.random.default_rng(7)
        errors = {1e-4: [], 1e-5: []}
        for _ in range(10):
            rate = rng.uniform(0.5, 2.0)
            level = rng.uniform(1.5, 2.5)
            true_time = np.log(level) / rate
            for tol in errors:
                ev = EventSpec(
                    surface=lambda t, x: float(x[0]) - level,
                    direction="up",
                    time_tolerance=tol,
                )
                traj = integrate_with_events(
                    lambda t, x: rate * x, 0.0, 1.2 * true_time, np.array([1.0]),
                    events=[ev], step=1.2 * true_time / 200,
                )
                errors[tol].append(abs(traj.switch_times[0] - true_time))
        assert max(errors[1e-4]) >= 5.0 * max(errors[1e-5])

    def test_chattering_guard(self):
        # surface flips with a fast sign oscillation in time
        ev = EventSpec(surface=lambda t, x: np.sin(2000.0 * t), direction="any")
        with pytest.raises(IntegrationError, match="chattering"):
            integrate_with_events(
                lambda t, x: np.ones(1), 0.0, 10.0, np.zeros(1), events=[ev],
                step=1e-3, max_events=100,
            )

    def test_non_finite_detection(self):
        with pytest.raises(IntegrationError, match="non-finite"):
            integrate_with_events(
                lambda t, x: x * x, 0.0, 10.0, np.array([5.0]), step=0.05
            )

    def test_trajectory_invariants(self):
        with pytest.raises(ValueError):
            Trajectory(
                times=np.array([0.0, 0.0, 1.0]),
                states=np.zeros((3, 1)),
                switch_times=np.array([]),
            )
        with pytest.raises(ValueError):
            Trajectory(
                times=np.array([0.0, 1.0]),
                states=np.zeros((2, 1)),
                switch_times=np.array([1.5]),
            )
