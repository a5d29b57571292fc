"""Box-constrained quasi-Newton minimizer contracts."""

import numpy as np
import pytest

from svcsel.exceptions import LineSearchError
from svcsel.optim import BoxBounds, Termination, minimize_box


def quadratic(center):
    center = np.asarray(center, dtype=float)

    def f(x):
        return float(np.sum((x - center) ** 2))

    def g(x):
        return 2.0 * (x - center)

    return f, g


class TestBoxBounds:
    def test_validation(self):
        with pytest.raises(ValueError):
            BoxBounds(lower=[1.0], upper=[0.0])

    def test_clip_and_contains(self):
        b = BoxBounds(lower=[0.0, -np.inf], upper=[1.0, np.inf])
        assert b.contains([0.5, 100.0])
        assert not b.contains([1.5, 0.0])
        assert np.allclose(b.clip([2.0, -3.0]), [1.0, -3.0])


class TestMinimizeBox:
    def test_unconstrained_quadratic(self):
        c = np.array([0.3, -0.7, 1.2])
        f, g = quadratic(c)
        rep = minimize_box(f, g, np.zeros(3), BoxBounds([-5] * 3, [5] * 3))
        assert np.max(np.abs(rep.x_star - c)) < 1e-6
        assert rep.converged

    def test_active_bound_clamps(self):
        f, g = quadratic([-2.0, 0.5])
        rep = minimize_box(f, g, np.array([0.0, 0.0]),
                           BoxBounds([-1.0, -1.0], [1.0, 1.0]))
        assert rep.x_star[0] == -1.0       # exactly at the bound
        assert rep.x_star[1] == pytest.approx(0.5, abs=1e-6)

    def test_rosenbrock(self):
        def f(x):
            return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

        def g(x):
            return np.array([
                -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                200 * (x[1] - x[0] ** 2),
            ])

        rep = minimize_box(f, g, np.array([-1.2, 1.0]),
                           BoxBounds([-2.0, -2.0], [2.0, 2.0]))
        assert np.max(np.abs(rep.x_star - 1.0)) < 1e-4

    def test_decrease_from_start(self):
        f, g = quadratic([2.0, 2.0])
        x0 = np.array([0.0, 0.0])
        rep = minimize_box(f, g, x0, BoxBounds([-3, -3], [3, 3]))
        assert rep.f_star <= f(x0)

    def test_monotone_over_accepted_iterates(self):
        history = []

        def f(x):
            val = float((x[0] - 1) ** 2 + 2 * (x[1] + 0.5) ** 2 + 0.3 * x[0] * x[1])
            return val

        def g(x):
            return np.array([2 * (x[0] - 1) + 0.3 * x[1],
                             4 * (x[1] + 0.5) + 0.3 * x[0]])

        from scipy.optimize import minimize as sp_min
        x0 = np.array([3.0, 3.0])
        sp_min(f, x0, jac=g, method="L-BFGS-B",
               callback=lambda xk: history.append(f(xk)))
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_zero_gradient_coordinate_stalls(self):
        def f(x):
            return float((x[0] - 3.0) ** 2)

        def g(x):
            return np.array([2.0 * (x[0] - 3.0), 0.0])

        x0 = np.array([0.0, 0.7123])
        rep = minimize_box(f, g, x0, BoxBounds([-10, -10], [10, 10]))
        assert rep.x_star[1] == 0.7123     # bit-exact stall
        assert rep.x_star[0] == pytest.approx(3.0, abs=1e-6)

    def test_feasibility_of_result(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            c = rng.normal(size=4) * 3
            f, g = quadratic(c)
            b = BoxBounds(lower=-np.ones(4), upper=np.ones(4))
            rep = minimize_box(f, g, np.zeros(4), b)
            assert b.contains(rep.x_star)

    def test_start_outside_bounds_rejected(self):
        f, g = quadratic([0.0])
        with pytest.raises(ValueError):
            minimize_box(f, g, np.array([2.0]), BoxBounds([0.0], [1.0]))

    def test_non_finite_objective_raises_with_best(self):
        def f(x):
            if x[0] > 0.5:
                return np.inf
            return float(x[0] ** 2)

        def g(x):
            return np.array([2.0 * x[0] if x[0] <= 0.5 else np.nan])

        with pytest.raises(LineSearchError) as err:
            minimize_box(lambda x: np.nan, lambda x: np.zeros(1),
                         np.array([0.0]), BoxBounds([-1.0], [1.0]))
        assert err.value.best_x is not None

    def test_max_iterations_termination(self):
        def f(x):
            return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

        def g(x):
            return np.array([
                -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                200 * (x[1] - x[0] ** 2),
            ])

        rep = minimize_box(f, g, np.array([-1.2, 1.0]),
                           BoxBounds([-2, -2], [2, 2]), max_iter=2)
        assert not rep.converged
        assert rep.termination is Termination.MAX_ITER

    def test_fd_gradient_fallback(self):
        f, _ = quadratic([0.25, -0.5])
        rep = minimize_box(f, None, np.zeros(2), BoxBounds([-2, -2], [2, 2]))
        assert np.max(np.abs(rep.x_star - [0.25, -0.5])) < 1e-5
