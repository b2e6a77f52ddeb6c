"""Multiderivative Runge-Kutta steppers.

Two residual formulations are available for the implicit stage systems:

``direct``
    Unknowns are the stage states; the derivative chains are evaluated inside
    the residual.  Stage system size is M per stage.
``dersol``
    Each derivative becomes an unknown of its own, constrained by its
    defining relation, giving (r+1)*M unknowns per stage.  With the AT
    strategy the derivative unknowns carry the scaled convention
    ``z_k ~ dt^(k-1) y^(k)``, which keeps the stage rows uniformly O(dt).

Stage coupling follows the tableau structure: diagonally implicit tableaux
can be swept one stage at a time (``dimdrk``) or solved as one coupled system
(``fsmdrk``); tableaux with an explicit first stage copy the first stage from
the step start and couple the remaining stages in either mode.  Newton
Jacobians are assembled by finite differences of the residual, keeping every
variant Jacobian-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import newton
from .derivchain import (
    DerivStrategy,
    StrategyKind,
    derivatives_direct,
    derivatives_direct_with_jacobians,
    psi_dersol,
    psi_dersol_jacobians,
)
from .newton import NewtonConfig, NewtonReport
from .odesys import FluxModel
from .tableau import Structure, Tableau

__all__ = [
    "Formulation",
    "Coupling",
    "MethodSpec",
    "MethodError",
    "StepFailure",
    "StepTrace",
    "RunStats",
    "step_direct",
    "step_dersol",
    "step",
    "integrate",
    "first_stage_system",
]


class Formulation(str, Enum):
    DIRECT = "direct"
    DERSOL = "dersol"


class Coupling(str, Enum):
    DIMDRK = "dimdrk"
    FSMDRK = "fsmdrk"


class MethodError(ValueError):
    """The method specification is inconsistent with tableau or model."""


class StepFailure(RuntimeError):
    """A stage system failed to converge (or diverged).

    Carries the offending stage group, the Newton report of the failed solve
    and the partial step trace, so sweep drivers can log the run as
    non-converged without losing the conditioning data.
    """

    def __init__(self, message, *, stages=None, report=None, trace=None, step=None):
        super().__init__(message)
        self.stages = stages
        self.report = report
        self.trace = trace
        self.step = step


@dataclass(frozen=True)
class MethodSpec:
    """A complete method choice: tableau, derivative strategy, formulation,
    stage coupling and Newton configuration.

    ``stencil_halfwidth`` overrides the AT stencil half-width; the default is
    ``floor(q/2)``, the cheapest choice that preserves the scheme order.
    """

    tableau: Tableau
    strategy: StrategyKind
    formulation: Formulation = Formulation.DIRECT
    coupling: Coupling = Coupling.DIMDRK
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    stencil_halfwidth: int = None

    @property
    def halfwidth(self) -> int:
        if self.stencil_halfwidth is not None:
            return self.stencil_halfwidth
        return max(self.tableau.q // 2, 1)

    @property
    def method_id(self) -> str:
        return "_".join(
            (
                self.tableau.name,
                self.strategy.value,
                self.formulation.value,
                self.coupling.value,
            )
        )

    def deriv_strategy(self, dt: float) -> DerivStrategy:
        if self.strategy is StrategyKind.AT:
            return DerivStrategy(
                kind=self.strategy,
                max_order=self.tableau.r,
                stencil_halfwidth=self.halfwidth,
                dt=dt,
            )
        return DerivStrategy(kind=self.strategy, max_order=self.tableau.r)


@dataclass
class StepTrace:
    """Per-step record: one Newton report per solved stage group, the stage
    groups in solve order, the flux evaluation count and the accepted state."""

    stage_groups: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    flux_evals: int = 0
    y_next: np.ndarray = None

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports)

    @property
    def newton_iters(self) -> int:
        return sum(r.n_iter for r in self.reports)

    @property
    def monitored_report(self) -> NewtonReport:
        """Report of the last solved group (last implicit stage for dimdrk,
        the coupled system otherwise)."""
        if not self.reports:
            raise ValueError("step solved no implicit stage")
        return self.reports[-1]


class _FluxCounter:
    def __init__(self, flux):
        self._flux = flux
        self.count = 0

    def __call__(self, y):
        self.count += 1
        return self._flux(y)


def _counted_model(model: FluxModel):
    counter = _FluxCounter(model.flux)
    return replace(model, flux=counter), counter


def _group_solve(residual, init, cfg, jacobian):
    """Newton solve that degrades solver breakdowns into failed reports.

    A singular Jacobian or a non-finite state (e.g. after an earlier stage
    diverged) yields a non-converged report instead of aborting, so sweep
    drivers keep whatever conditioning data the solve produced.
    """
    try:
        return newton.solve(residual, init, cfg, jacobian=jacobian)
    except newton.SingularJacobianError as exc:
        return init, exc.report
    except newton.NonFiniteResidualError:
        report = NewtonReport(
            converged=False,
            n_iter=0,
            residuals=[],
            cond1=[],
            mean_cond1=math.nan,
            divergence_iter=0,
        )
        return init, report


def analytic_mode_reason(spec: MethodSpec, model: FluxModel):
    """None when analytic stage Jacobians are available, else why not.

    The approximate strategy only needs the model's flux Jacobian; the
    exact-Jacobian strategy additionally needs one tensor order beyond what
    the chain itself uses, capping it at three derivatives.  The recursive
    strategy would need derivatives of the user-supplied matrices.
    """
    if model.flux_jacobian is None:
        return f"model {model.name!r} has no flux_jacobian"
    if spec.strategy is StrategyKind.REC and spec.tableau.r >= 2:
        return "recursive strategy has no analytic stage Jacobian"
    if spec.strategy is StrategyKind.EJ:
        if spec.tableau.r > 3:
            return "exact-Jacobian stage Jacobians stop at three derivatives"
        if spec.tableau.r >= 2 and not model.deriv_tensors:
            return f"model {model.name!r} has no derivative tensor actions"
        if spec.tableau.r >= 3 and (
            len(model.deriv_tensors) < 2 or model.deriv_tensors[1] is None
        ):
            return f"model {model.name!r} has no third-derivative tensor action"
    return None


def _validate(spec: MethodSpec, model: FluxModel) -> None:
    if spec.newton.jacobian_mode == "analytic":
        reason = analytic_mode_reason(spec, model)
        if reason is not None:
            raise MethodError(f"analytic Newton Jacobians unavailable: {reason}")
    if (
        spec.coupling is Coupling.DIMDRK
        and spec.tableau.structure is Structure.FULLY_IMPLICIT
    ):
        raise MethodError(
            f"tableau {spec.tableau.name!r} is fully implicit; stage-at-a-time "
            "solves need a diagonally implicit or single-stage structure"
        )
    if model.dim < 1:
        raise MethodError("model dimension must be positive")


def _solve_plan(tab: Tableau, coupling: Coupling):
    """Ordered plan of ('eval', stage) and ('solve', stages) actions."""
    sweep = coupling is Coupling.DIMDRK and tab.structure in (
        Structure.SINGLE_STAGE,
        Structure.DIAGONALLY_IMPLICIT,
    )
    if sweep:
        return [
            ("solve", (l,)) if tab.stage_is_implicit(l) else ("eval", l)
            for l in range(tab.s)
        ]
    lead = 0
    while lead < tab.s and not tab.stage_is_implicit(lead):
        lead += 1
    plan = [("eval", l) for l in range(lead)]
    if lead < tab.s:
        plan.append(("solve", tuple(range(lead, tab.s))))
    return plan


def _eval_stage(tab, l, y_n, dt, chains):
    val = np.array(y_n, dtype=float)
    for k in range(1, tab.r + 1):
        row = tab.a[k - 1][l]
        for nu in range(tab.s):
            if row[nu] != 0.0:
                val += dt**k * row[nu] * chains[nu][k - 1]
    return val


def _combine(tab, weights_per_k, y_n, dt, values_per_stage, dt_power):
    """y_n + sum_k coeff(k) sum_l w^(k)_l * values[l][k-1]."""
    out = np.array(y_n, dtype=float)
    for k in range(1, tab.r + 1):
        row = weights_per_k[k - 1]
        coeff = dt_power(k)
        for l in range(tab.s):
            if row[l] != 0.0:
                out += coeff * row[l] * values_per_stage[l][k - 1]
    return out


# ---------------------------------------------------------------------------
# direct formulation
# ---------------------------------------------------------------------------

def _direct_residual(group, tab, strat, model, y_n, dt, chains):
    dim = model.dim
    offsets = {l: i * dim for i, l in enumerate(group)}

    def residual(x):
        local = {l: x[offsets[l] : offsets[l] + dim] for l in group}
        gchains = {l: derivatives_direct(strat, model, local[l]) for l in group}
        rows = np.empty(len(group) * dim)
        for i, l in enumerate(group):
            acc = local[l] - y_n
            for k in range(1, tab.r + 1):
                a_row = tab.a[k - 1][l]
                coeff = dt**k
                for nu in range(tab.s):
                    if a_row[nu] != 0.0:
                        ch = gchains[nu] if nu in gchains else chains[nu]
                        acc = acc - coeff * a_row[nu] * ch[k - 1]
            rows[i * dim : (i + 1) * dim] = acc
        return rows

    return residual


def _direct_jacobian(group, tab, strat, model, y_n, dt):
    dim = model.dim
    n = len(group) * dim

    def jacobian(x):
        out = np.zeros((n, n))
        jacs = {}
        for i, l in enumerate(group):
            _, jacs_l = derivatives_direct_with_jacobians(
                strat, model, x[i * dim : (i + 1) * dim]
            )
            jacs[l] = jacs_l
        for i, l in enumerate(group):
            out[i * dim : (i + 1) * dim, i * dim : (i + 1) * dim] = np.eye(dim)
            for k in range(1, tab.r + 1):
                a_row = tab.a[k - 1][l]
                for jdx, nu in enumerate(group):
                    if a_row[nu] != 0.0:
                        out[i * dim : (i + 1) * dim, jdx * dim : (jdx + 1) * dim] -= (
                            dt**k * a_row[nu] * jacs[nu][k - 1]
                        )
        return out

    return jacobian


def step_direct(spec, model, y_n, dt, *, raise_on_failure=True):
    """Advance one step with stage states as the only unknowns."""
    _validate(spec, model)
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    y_n = np.asarray(y_n, dtype=float)
    cmodel, counter = _counted_model(model)
    strat = spec.deriv_strategy(dt)
    tab = spec.tableau
    trace = StepTrace()
    chains = {}
    values = {}
    for action, payload in _solve_plan(tab, spec.coupling):
        if action == "eval":
            l = payload
            values[l] = _eval_stage(tab, l, y_n, dt, chains)
            chains[l] = derivatives_direct(strat, cmodel, values[l])
            continue
        group = payload
        res = _direct_residual(group, tab, strat, cmodel, y_n, dt, chains)
        jac = (
            _direct_jacobian(group, tab, strat, model, y_n, dt)
            if spec.newton.jacobian_mode == "analytic"
            else None
        )
        init = np.tile(y_n, len(group))
        sol, report = _group_solve(res, init, spec.newton, jac)
        trace.stage_groups.append(group)
        trace.reports.append(report)
        for i, l in enumerate(group):
            values[l] = sol[i * model.dim : (i + 1) * model.dim]
            chains[l] = derivatives_direct(strat, cmodel, values[l])
        if not report.converged and raise_on_failure:
            trace.flux_evals = counter.count
            raise StepFailure(
                f"stage group {tuple(s + 1 for s in group)} did not converge "
                f"({report.n_iter} iterations"
                + (f", diverged at {report.divergence_iter}" if report.divergence_iter else "")
                + ")",
                stages=group,
                report=report,
                trace=trace,
            )
    y_next = _combine(tab, tab.b, y_n, dt, [chains[l] for l in range(tab.s)], lambda k: dt**k)
    trace.flux_evals = counter.count
    trace.y_next = y_next
    return y_next, trace


# ---------------------------------------------------------------------------
# dersol formulation
# ---------------------------------------------------------------------------

def _z_from_chain(chain, y, dt, scaled):
    z = [np.asarray(y, dtype=float)]
    for k, val in enumerate(chain, start=1):
        z.append(dt ** (k - 1) * val if scaled else np.asarray(val, dtype=float))
    return z


def _dersol_residual(group, tab, strat, model, y_n, dt, known_z, scaled):
    dim = model.dim
    r = tab.r
    block = (r + 1) * dim

    def unpack(x):
        return {
            l: [x[i * block + k * dim : i * block + (k + 1) * dim] for k in range(r + 1)]
            for i, l in enumerate(group)
        }

    def residual(x):
        zs = unpack(x)
        rows = np.empty(len(group) * block)
        pos = 0
        for l in group:
            z = zs[l]
            acc = z[0] - y_n
            for k in range(1, r + 1):
                a_row = tab.a[k - 1][l]
                coeff = dt if scaled else dt**k
                for nu in range(tab.s):
                    if a_row[nu] != 0.0:
                        zv = zs[nu][k] if nu in zs else known_z[nu][k]
                        acc = acc - coeff * a_row[nu] * zv
            rows[pos : pos + dim] = acc
            pos += dim
            rows[pos : pos + dim] = model.flux(z[0]) - z[1]
            pos += dim
            for k in range(2, r + 1):
                rows[pos : pos + dim] = psi_dersol(strat, model, z[:k], k) - z[k]
                pos += dim
        return rows

    return residual


def _dersol_jacobian(group, tab, strat, model, y_n, dt, scaled):
    dim = model.dim
    r = tab.r
    block = (r + 1) * dim
    n = len(group) * block
    eye = np.eye(dim)

    def jacobian(x):
        zs = {
            l: [x[i * block + k * dim : i * block + (k + 1) * dim] for k in range(r + 1)]
            for i, l in enumerate(group)
        }
        col0 = {l: i * block for i, l in enumerate(group)}
        out = np.zeros((n, n))
        for i, l in enumerate(group):
            row = i * block
            # stage row
            out[row : row + dim, col0[l] : col0[l] + dim] = eye
            for k in range(1, r + 1):
                a_row = tab.a[k - 1][l]
                coeff = dt if scaled else dt**k
                for nu in group:
                    if a_row[nu] != 0.0:
                        c = col0[nu] + k * dim
                        out[row : row + dim, c : c + dim] -= coeff * a_row[nu] * eye
            # first derivative relation
            row += dim
            out[row : row + dim, col0[l] : col0[l] + dim] = np.asarray(
                model.flux_jacobian(zs[l][0]), dtype=float
            )
            out[row : row + dim, col0[l] + dim : col0[l] + 2 * dim] = -eye
            # higher relations
            for k in range(2, r + 1):
                row += dim
                parts = psi_dersol_jacobians(strat, model, zs[l][:k], k)
                for m in range(k):
                    c = col0[l] + m * dim
                    out[row : row + dim, c : c + dim] = parts[m]
                c = col0[l] + k * dim
                out[row : row + dim, c : c + dim] = -eye
        return out

    return jacobian


def step_dersol(spec, model, y_n, dt, *, raise_on_failure=True):
    """Advance one step with the derivatives as additional unknowns."""
    _validate(spec, model)
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    y_n = np.asarray(y_n, dtype=float)
    cmodel, counter = _counted_model(model)
    strat = spec.deriv_strategy(dt)
    tab = spec.tableau
    scaled = spec.strategy is StrategyKind.AT
    trace = StepTrace()
    z_all = {}
    chain_at_start = derivatives_direct(strat, cmodel, y_n)
    z_init_stage = _z_from_chain(chain_at_start, y_n, dt, scaled)
    for action, payload in _solve_plan(tab, spec.coupling):
        if action == "eval":
            l = payload
            # leading explicit stages carry the step-start state
            val = _eval_from_z(tab, l, y_n, dt, z_all, scaled)
            chain = (
                chain_at_start
                if np.array_equal(val, y_n)
                else derivatives_direct(strat, cmodel, val)
            )
            z_all[l] = _z_from_chain(chain, val, dt, scaled)
            continue
        group = payload
        res = _dersol_residual(group, tab, strat, cmodel, y_n, dt, z_all, scaled)
        jac = (
            _dersol_jacobian(group, tab, strat, model, y_n, dt, scaled)
            if spec.newton.jacobian_mode == "analytic"
            else None
        )
        init = np.concatenate([np.concatenate(z_init_stage)] * len(group))
        sol, report = _group_solve(res, init, spec.newton, jac)
        trace.stage_groups.append(group)
        trace.reports.append(report)
        block = (tab.r + 1) * model.dim
        for i, l in enumerate(group):
            z_all[l] = [
                sol[i * block + k * model.dim : i * block + (k + 1) * model.dim]
                for k in range(tab.r + 1)
            ]
        if not report.converged and raise_on_failure:
            trace.flux_evals = counter.count
            raise StepFailure(
                f"stage group {tuple(s + 1 for s in group)} did not converge "
                f"({report.n_iter} iterations"
                + (f", diverged at {report.divergence_iter}" if report.divergence_iter else "")
                + ")",
                stages=group,
                report=report,
                trace=trace,
            )
    derivative_slots = [z_all[l][1:] for l in range(tab.s)]
    y_next = _combine(
        tab, tab.b, y_n, dt, derivative_slots, (lambda k: dt) if scaled else (lambda k: dt**k)
    )
    trace.flux_evals = counter.count
    trace.y_next = y_next
    return y_next, trace


def _eval_from_z(tab, l, y_n, dt, z_all, scaled):
    val = np.array(y_n, dtype=float)
    for k in range(1, tab.r + 1):
        row = tab.a[k - 1][l]
        coeff = dt if scaled else dt**k
        for nu in range(tab.s):
            if row[nu] != 0.0:
                val += coeff * row[nu] * z_all[nu][k]
    return val


def step(spec, model, y_n, dt, *, raise_on_failure=True):
    """Dispatch on the formulation of ``spec``."""
    if spec.formulation is Formulation.DIRECT:
        return step_direct(spec, model, y_n, dt, raise_on_failure=raise_on_failure)
    return step_dersol(spec, model, y_n, dt, raise_on_failure=raise_on_failure)


# ---------------------------------------------------------------------------
# time marching
# ---------------------------------------------------------------------------

@dataclass
class RunStats:
    """Aggregate of a fixed-step integration."""

    n_steps: int
    dt: float
    total_newton_iters: int = 0
    iters_per_step: list = field(default_factory=list)
    flux_evals: int = 0
    converged: bool = True
    failed_step: int = None
    traces: list = None


def integrate(spec, model, n_steps, *, keep_traces=False, raise_on_failure=True):
    """March ``n_steps`` fixed steps of size ``model.t_end / n_steps``.

    Returns ``(y_final, RunStats)``.  Newton guesses: direct stages start at
    the step-start state; dersol unknowns start at the step-start state and
    the strategy's own derivative chain there.  With
    ``raise_on_failure=False`` the run records the first failed step and
    stops marching instead of raising.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    dt = model.t_end / n_steps
    stats = RunStats(n_steps=n_steps, dt=dt, traces=[] if keep_traces else None)
    y = np.array(model.y0, dtype=float)
    for n in range(n_steps):
        try:
            y, trace = step(spec, model, y, dt, raise_on_failure=raise_on_failure)
        except StepFailure as failure:
            failure.step = n
            trace = failure.trace
            if trace is not None:
                _absorb(stats, trace, keep_traces)
            stats.converged = False
            stats.failed_step = n
            failure.stats = stats
            raise
        _absorb(stats, trace, keep_traces)
        if not trace.converged:
            stats.converged = False
            stats.failed_step = n
            break
    return y, stats


def _absorb(stats, trace, keep_traces):
    stats.total_newton_iters += trace.newton_iters
    stats.iters_per_step.append(trace.newton_iters)
    stats.flux_evals += trace.flux_evals
    if keep_traces:
        stats.traces.append(trace)


# ---------------------------------------------------------------------------
# residual access for verification
# ---------------------------------------------------------------------------

def first_stage_system(spec, model, y_n, dt):
    """Residual, initial guess, stage group and analytic Jacobian (or None)
    of the first implicit stage group.

    Leading explicit stages are evaluated first, exactly as in a step, so the
    returned callable is the system a step would hand to the Newton solver.
    Useful for inspecting stage residuals and their Jacobians directly.
    """
    _validate(spec, model)
    y_n = np.asarray(y_n, dtype=float)
    strat = spec.deriv_strategy(dt)
    tab = spec.tableau
    dersol = spec.formulation is Formulation.DERSOL
    scaled = dersol and spec.strategy is StrategyKind.AT
    chains = {}
    z_all = {}
    chain_at_start = derivatives_direct(strat, model, y_n)
    for action, payload in _solve_plan(tab, spec.coupling):
        if action == "eval":
            l = payload
            values_l = _eval_stage(tab, l, y_n, dt, chains) if not dersol else _eval_from_z(
                tab, l, y_n, dt, z_all, scaled
            )
            chain = (
                chain_at_start
                if np.array_equal(values_l, y_n)
                else derivatives_direct(strat, model, values_l)
            )
            chains[l] = chain
            z_all[l] = _z_from_chain(chain, values_l, dt, scaled)
            continue
        group = payload
        analytic = analytic_mode_reason(spec, model) is None
        if dersol:
            res = _dersol_residual(group, tab, strat, model, y_n, dt, z_all, scaled)
            init = np.concatenate(
                [np.concatenate(_z_from_chain(chain_at_start, y_n, dt, scaled))] * len(group)
            )
            jac = _dersol_jacobian(group, tab, strat, model, y_n, dt, scaled) if analytic else None
        else:
            res = _direct_residual(group, tab, strat, model, y_n, dt, chains)
            init = np.tile(y_n, len(group))
            jac = _direct_jacobian(group, tab, strat, model, y_n, dt) if analytic else None
        return res, init, group, jac
    raise MethodError(f"tableau {tab.name!r} has no implicit stage")
