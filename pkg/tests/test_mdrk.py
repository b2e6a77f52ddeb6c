import math

import numpy as np
import pytest

from mdrklab import mdrk
from mdrklab.derivchain import StrategyKind
from mdrklab.mdrk import (
    Coupling,
    Formulation,
    MethodError,
    MethodSpec,
    StepFailure,
    analytic_mode_reason,
    first_stage_system,
)
from mdrklab.newton import NewtonConfig, fd_jacobian
from mdrklab.odesys import dahlquist_scaled, pareschi_russo, two_var_model
from mdrklab.tableau import builtin_tableau, parse_tableau


def spec_for(scheme, strat="ej", form="direct", coupling="dimdrk", **kw):
    return MethodSpec(
        tableau=builtin_tableau(scheme),
        strategy=StrategyKind(strat),
        formulation=Formulation(form),
        coupling=Coupling(coupling),
        **kw,
    )


def test_forward_euler_step():
    model = dahlquist_scaled(-1.0, 1.0)
    y, trace = mdrk.step(spec_for("ExplTaylor-1", "at"), model, model.y0, 0.1)
    assert y[0] == pytest.approx(0.9, abs=1e-15)
    assert trace.reports == []  # nothing to solve


def test_backward_euler_step_and_integration():
    model = dahlquist_scaled(-1.0, 1.0)
    y, _ = mdrk.step(spec_for("ImplTaylor-1"), model, model.y0, 1.0)
    assert y[0] == pytest.approx(0.5, abs=1e-12)
    y, stats = mdrk.integrate(spec_for("ImplTaylor-1"), model, 10)
    assert y[0] == pytest.approx((1.0 / 1.1) ** 10, abs=1e-10)
    assert stats.n_steps == 10
    assert len(stats.iters_per_step) == 10
    assert stats.converged


def test_two_derivative_scheme_matches_linear_solve_oracle():
    # one step on the scalar linear test problem solves a 1x1 linear stage
    # system; assemble and solve that system independently
    lam, eps, dt = -1.0, 1.0, 0.3
    model = dahlquist_scaled(lam, eps)
    tab = builtin_tableau("HB-I2DRK4-2s")
    z = lam / eps
    growth = (1.0 + dt * tab.a[0][1, 0] * z + dt**2 * tab.a[1][1, 0] * z**2) / (
        1.0 - dt * tab.a[0][1, 1] * z - dt**2 * tab.a[1][1, 1] * z**2
    )
    update = (
        1.0
        + dt * z * (tab.b[0][0] + tab.b[0][1] * growth)
        + dt**2 * z**2 * (tab.b[1][0] + tab.b[1][1] * growth)
    )
    pade = (1.0 + dt * z / 2.0 + (dt * z) ** 2 / 12.0) / (
        1.0 - dt * z / 2.0 + (dt * z) ** 2 / 12.0
    )
    assert update == pytest.approx(pade, rel=1e-13)
    for strat in ("at", "ej", "rec"):
        y, _ = mdrk.step(spec_for("HB-I2DRK4-2s", strat), model, model.y0, dt)
        assert y[0] == pytest.approx(update, rel=1e-12)


def test_dersol_jacobian_blocks_on_linear_problem():
    # the stage system of the derivatives-as-unknowns formulation has the
    # printed bordered structure; on a linear flux the finite-difference
    # Jacobian recovers it exactly
    eps, dt = 0.2, 0.7
    model = dahlquist_scaled(-1.0, eps)
    inv_eps = 1.0 / eps

    expected_ej = np.array(
        [
            [1.0, -dt, dt**2 / 2.0, -(dt**3) / 6.0],
            [-inv_eps, -1.0, 0.0, 0.0],
            [0.0, -inv_eps, -1.0, 0.0],
            [0.0, 0.0, -inv_eps, -1.0],
        ]
    )
    expected_rec = expected_ej.copy()
    expected_rec[3] = [0.0, inv_eps**2, 0.0, -1.0]

    for strat, expected in (("ej", expected_ej), ("rec", expected_rec)):
        spec = spec_for("ImplTaylor-3", strat, form="dersol")
        res, init, _, _ = first_stage_system(spec, model, model.y0, dt)
        jac = fd_jacobian(res, init + 0.1)
        assert np.abs(jac - expected).max() <= 1e-6 * np.abs(expected).max()


def test_dersol_converged_derivative_unknowns_follow_linear_chain():
    eps = 0.5
    model = dahlquist_scaled(-1.0, eps)
    z_pow = -1.0 / eps
    from mdrklab.newton import solve

    for strat in ("ej", "rec"):
        spec = spec_for("ImplTaylor-3", strat, form="dersol")
        res, init, _, _ = first_stage_system(spec, model, model.y0, 0.4)
        sol, report = solve(res, init, NewtonConfig())
        assert report.converged
        for k in (1, 2, 3):
            assert sol[k] == pytest.approx(z_pow**k * sol[0], rel=1e-12)


def test_formulations_and_couplings_agree():
    model = pareschi_russo(1.0)
    for scheme in ("ImplTaylor-3", "HB-I2DRK4-2s", "SSP-I2DRK3-2s"):
        for strat in ("at", "ej", "rec"):
            ya, _ = mdrk.step(spec_for(scheme, strat, "direct"), model, model.y0, 0.25)
            yb, _ = mdrk.step(spec_for(scheme, strat, "dersol"), model, model.y0, 0.25)
            assert np.linalg.norm(ya - yb) <= 1e-9
    for strat in ("at", "ej"):
        ya, _ = mdrk.step(
            spec_for("SSP-I2DRK4-5s", strat, coupling="dimdrk"), model, model.y0, 0.25
        )
        yb, _ = mdrk.step(
            spec_for("SSP-I2DRK4-5s", strat, coupling="fsmdrk"), model, model.y0, 0.25
        )
        assert np.linalg.norm(ya - yb) <= 1e-10


def test_two_variable_model_conditioning_asymptotics():
    # fixed-state Newton matrices of the two-derivative scheme: the norm
    # grows like eps^-2 while the conditioning grows like eps^-1 when the
    # mixed-partial combination g_u*g_vv - g_v*g_uv stays away from zero
    def g(u, v):
        return math.exp(v) + u * v

    def g_grad(u, v):
        return (v, math.exp(v) + u)

    y_point = np.array([0.3, -0.7])
    norms, conds = [], []
    eps_list = [1e-2, 1e-3, 1e-4, 1e-5]
    for eps in eps_list:
        model = two_var_model(1.0, g, eps, g_grad=g_grad)
        spec = spec_for("ImplTaylor-2")
        res, _, _, _ = first_stage_system(spec, model, model.y0, 1.0)
        jac = fd_jacobian(res, y_point)
        norms.append(np.abs(jac).sum(0).max())
        conds.append(np.abs(jac).sum(0).max() * np.abs(np.linalg.inv(jac)).sum(0).max())
    x = -np.log10(eps_list)
    norm_slope = np.polyfit(x, np.log10(norms), 1)[0]
    cond_slope = np.polyfit(x, np.log10(conds), 1)[0]
    assert norm_slope == pytest.approx(2.0, abs=0.3)
    assert cond_slope == pytest.approx(1.0, abs=0.4)

    # the relaxation benchmark has that combination identically zero and
    # shows the full eps^-2 conditioning instead
    conds = []
    for eps in eps_list:
        model = pareschi_russo(eps)
        res, _, _, _ = first_stage_system(spec_for("ImplTaylor-2"), model, model.y0, 1.0)
        jac = fd_jacobian(res, y_point)
        conds.append(np.abs(jac).sum(0).max() * np.abs(np.linalg.inv(jac)).sum(0).max())
    cond_slope = np.polyfit(x, np.log10(conds), 1)[0]
    assert cond_slope == pytest.approx(2.0, abs=0.4)


def test_flux_evaluations_are_counted():
    # explicit two-derivative Taylor with half-width 1: one evaluation for
    # the first derivative, three stencil samples for the second
    model = dahlquist_scaled(-1.0, 1.0)
    spec = spec_for("ExplTaylor-2", "at", stencil_halfwidth=1)
    _, trace = mdrk.step(spec, model, model.y0, 0.1)
    assert trace.flux_evals == 4


def test_step_failure_carries_report_and_stats():
    model = pareschi_russo(1e-5).with_t_end(1.0)
    spec = spec_for("ImplTaylor-3", "at", stencil_halfwidth=1,
                    newton=NewtonConfig(max_iter=200, jacobian_mode="analytic"))
    with pytest.raises(StepFailure) as err:
        mdrk.integrate(spec, model, 1)
    assert err.value.step == 0
    assert err.value.report is not None and not err.value.report.converged
    assert err.value.stats.failed_step == 0

    y, stats = mdrk.integrate(spec, model, 1, keep_traces=True, raise_on_failure=False)
    assert not stats.converged
    assert stats.failed_step == 0
    assert stats.traces[0].reports[-1].divergence_iter is not None


def test_method_validation_errors():
    dense = parse_tableau(
        "dense 1 2 2 FullyImplicit\n"
        "1/4 -1/4\n1/4 3/4\n"
        "1/4 3/4\n"
        "0 1\n"
    )
    model = pareschi_russo(1.0)
    with pytest.raises(MethodError, match="fully implicit"):
        mdrk.step(
            MethodSpec(tableau=dense, strategy=StrategyKind.EJ, coupling=Coupling.DIMDRK),
            model,
            model.y0,
            0.1,
        )
    with pytest.raises(MethodError, match="analytic"):
        mdrk.step(
            spec_for("ImplTaylor-3", "rec", newton=NewtonConfig(jacobian_mode="analytic")),
            model,
            model.y0,
            0.1,
        )
    with pytest.raises(ValueError, match="dt"):
        mdrk.step(spec_for("ImplTaylor-1"), model, model.y0, -0.1)
    with pytest.raises(ValueError, match="n_steps"):
        mdrk.integrate(spec_for("ImplTaylor-1"), model, 0)


def test_fully_implicit_tableau_steps_under_full_coupling():
    # dense 1-derivative tableau (2-stage Gauss) must integrate y'=-y at
    # its classical fourth order
    gauss = parse_tableau(
        "gauss4 1 2 4 FullyImplicit\n"
        f"{0.25} {0.25 - math.sqrt(3) / 6}\n"
        f"{0.25 + math.sqrt(3) / 6} {0.25}\n"
        "1/2 1/2\n"
        f"{0.5 - math.sqrt(3) / 6} {0.5 + math.sqrt(3) / 6}\n"
    )
    model = dahlquist_scaled(-1.0, 1.0)
    spec = MethodSpec(tableau=gauss, strategy=StrategyKind.EJ, coupling=Coupling.FSMDRK)
    errs = []
    for n in (4, 8):
        y, _ = mdrk.integrate(spec, model, n)
        errs.append(abs(y[0] - math.exp(-1.0)))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.3)


def test_analytic_mode_reason_reporting():
    model = pareschi_russo(1.0)
    assert analytic_mode_reason(spec_for("ImplTaylor-3", "at"), model) is None
    assert analytic_mode_reason(spec_for("ImplTaylor-3", "ej"), model) is None
    assert "recursive" in analytic_mode_reason(spec_for("ImplTaylor-3", "rec"), model)
    assert "three derivatives" in analytic_mode_reason(spec_for("ImplTaylor-4", "ej"), model)


def test_method_id_and_halfwidth_defaults():
    spec = spec_for("HB-I2DRK4-2s", "at")
    assert spec.method_id == "HB-I2DRK4-2s_at_direct_dimdrk"
    assert spec.halfwidth == 2  # floor(q/2)
    assert spec_for("SSP-I2DRK3-2s", "at").halfwidth == 1
    assert spec_for("HB-I2DRK4-2s", "at", stencil_halfwidth=1).halfwidth == 1
