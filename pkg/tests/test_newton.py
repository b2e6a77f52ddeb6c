import math

import numpy as np
import pytest

from mdrklab.mdrk import MethodSpec, first_stage_system
from mdrklab.newton import (
    DIVERGENCE_NORM,
    NewtonConfig,
    NonFiniteResidualError,
    SingularJacobianError,
    empirical_order_eps,
    fd_jacobian,
    solve,
)
from mdrklab.odesys import pareschi_russo
from mdrklab.tableau import builtin_tableau
from mdrklab import StrategyKind


def test_affine_residual_converges_in_one_iteration():
    y, report = solve(lambda y: y - 2.0, np.array([0.0]), NewtonConfig())
    assert report.converged
    assert report.n_iter == 1
    assert y[0] == pytest.approx(2.0, abs=1e-12)
    assert report.cond1 == [pytest.approx(1.0, rel=1e-6)]
    assert report.mean_cond1 == pytest.approx(1.0, rel=1e-6)


def test_report_histories_have_length_n_iter():
    def residual(y):
        return np.array([math.atan(2.0 * y[0])])

    y, report = solve(residual, np.array([1.5]), NewtonConfig())
    assert report.converged
    assert len(report.residuals) == report.n_iter
    assert len(report.cond1) == report.n_iter
    assert report.mean_cond1 == pytest.approx(np.mean(report.cond1))


def test_fd_jacobian_linear_and_diagonal():
    mat = np.array([[2.0, -1.0, 0.5], [0.0, 3.0, 1.0], [1.0, 1.0, -2.0]])
    approx = fd_jacobian(lambda y: mat @ y, np.array([0.4, -1.2, 2.0]))
    assert np.abs(approx - mat).max() <= 1e-7 * np.abs(mat).max()

    approx = fd_jacobian(lambda y: np.array([y[0] ** 2, y[1]]), np.array([3.0, 1.0]))
    assert np.allclose(approx, [[6.0, 0.0], [0.0, 1.0]], atol=1e-6)


def test_fd_jacobian_matches_analytic_on_stage_residual():
    # the approximate-strategy stage system carries an exact Jacobian built
    # from the flux Jacobian alone; finite differences must agree
    model = pareschi_russo(1.0)
    spec = MethodSpec(tableau=builtin_tableau("ImplTaylor-2"), strategy=StrategyKind.AT)
    res, init, _, jac = first_stage_system(spec, model, model.y0, 0.02)
    x = init + np.array([0.03, -0.05])
    analytic = jac(x)
    approx = fd_jacobian(res, x)
    assert np.abs(analytic - approx).max() / np.abs(analytic).max() <= 1e-5


def test_quadratic_local_convergence_on_stage_system():
    model = pareschi_russo(1.0)
    spec = MethodSpec(tableau=builtin_tableau("ImplTaylor-2"), strategy=StrategyKind.EJ)
    res, init, _, _ = first_stage_system(spec, model, model.y0, 0.5)
    _, report = solve(res, init, NewtonConfig())
    assert report.converged
    pre = [np.linalg.norm(res(init))] + report.residuals[:-1]
    ratios = [aft / max(b**2, 1e-300) for b, aft in zip(pre, report.residuals)]
    assert min(ratios) < 10.0  # quadratic contraction visible near the root


def test_damped_steps_never_increase_residual():
    # full steps on atan overshoot; accepted damped steps must decrease ||F||
    def residual(y):
        return np.array([math.atan(4.0 * y[0])])

    _, report = solve(residual, np.array([2.0]), NewtonConfig())
    assert report.converged
    history = [float(np.linalg.norm(residual(np.array([2.0]))))] + report.residuals
    assert all(b < a for a, b in zip(history, history[1:]))


def test_damping_flag_off_lets_overshoot_run_away():
    # without damping the atan overshoot cycle escalates until the Jacobian
    # degenerates or divergence is declared; it must not converge
    def residual(y):
        return np.array([math.atan(4.0 * y[0])])

    try:
        _, report = solve(
            residual, np.array([2.0]), NewtonConfig(damping=False, max_iter=8)
        )
    except SingularJacobianError:
        return
    assert not report.converged


def test_singular_jacobian_raises_with_partial_report():
    def residual(y):
        return np.array([y[0] + y[1], y[0] + y[1]])

    with pytest.raises(SingularJacobianError) as err:
        solve(residual, np.array([1.0, 2.0]), NewtonConfig())
    assert err.value.report is not None
    assert not err.value.report.converged


def test_non_finite_initial_residual_raises():
    def residual(y):
        return np.array([math.sqrt(y[0])]) if y[0] >= 0 else np.array([math.nan])

    with pytest.raises(NonFiniteResidualError):
        solve(residual, np.array([-1.0]), NewtonConfig())


def test_divergence_is_reported_not_raised():
    # y^2 + 1 has no root; from a tiny iterate the Newton step explodes
    def residual(y):
        return np.array([y[0] ** 2 + 1.0])

    y, report = solve(residual, np.array([1e-8]), NewtonConfig(max_iter=50))
    assert not report.converged
    assert report.divergence_iter is not None
    assert report.residuals[-1] > DIVERGENCE_NORM or not math.isfinite(report.residuals[-1])


def test_analytic_mode_requires_callable():
    with pytest.raises(ValueError, match="jacobian"):
        solve(lambda y: y, np.array([1.0]), NewtonConfig(jacobian_mode="analytic"))


def test_analytic_mode_uses_callable():
    mat = np.array([[4.0, 1.0], [0.0, 2.0]])

    def residual(y):
        return mat @ y - np.array([1.0, 1.0])

    y, report = solve(
        residual,
        np.zeros(2),
        NewtonConfig(jacobian_mode="analytic"),
        jacobian=lambda y: mat,
    )
    assert report.converged and report.n_iter == 1
    brute = np.abs(mat).sum(0).max() * np.abs(np.linalg.inv(mat)).sum(0).max()
    assert report.cond1[0] == pytest.approx(brute, rel=1e-12)


def test_cond1_matches_brute_force_on_random_systems():
    rng = np.random.default_rng(123)
    for _ in range(10):
        mat = rng.standard_normal((6, 6)) + 6.0 * np.eye(6)
        rhs = rng.standard_normal(6)

        def residual(y, mat=mat, rhs=rhs):
            return mat @ y - rhs

        _, report = solve(residual, np.zeros(6), NewtonConfig(jacobian_mode="analytic"),
                          jacobian=lambda y, mat=mat: mat)
        brute = np.abs(mat).sum(0).max() * np.abs(np.linalg.inv(mat)).sum(0).max()
        assert report.cond1[0] == pytest.approx(brute, rel=1e-8)


def test_empirical_order_eps():
    eo = empirical_order_eps({1e-2: 2.69e5, 1e-3: 2.71e8})
    assert eo[0] == pytest.approx(3.0032, abs=1e-3)
    assert empirical_order_eps({1e-1: 7.0, 1e-2: 7.0, 1e-3: 7.0}) == [0.0, 0.0]
    assert empirical_order_eps({1e-1: 10.0, 1e-2: 1000.0}) == [pytest.approx(2.0)]
    with pytest.raises(ValueError, match="two"):
        empirical_order_eps({1e-2: 5.0})
    with pytest.raises(ValueError, match="decade"):
        empirical_order_eps({1e-1: 1.0, 3e-2: 2.0})


def test_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(n_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iter=0)
    with pytest.raises(ValueError):
        NewtonConfig(backtrack_factor=1.5)
    with pytest.raises(ValueError):
        NewtonConfig(jacobian_mode="magic")
