"""Experiment harness: convergence sweeps, conditioning sweeps, single runs.

Every sweep produces a list of :class:`RunRecord` rows that serialize to a
fixed CSV schema.  Missing quantities render as empty fields; diverged runs
are kept with ``converged=false`` instead of being dropped.  Problems without
an exact solution get a cached fine-grid reference computed at 64x the finest
requested resolution with the rec-direct HB-I3DRK6-2s scheme.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import mdrk, newton
from .derivchain import StrategyKind
from .mdrk import Coupling, Formulation, MethodSpec, StepFailure
from .newton import NewtonConfig
from .odesys import FluxModel, make_problem
from .tableau import builtin_tableau

__all__ = [
    "RunRecord",
    "CSV_COLUMNS",
    "ReferenceUnavailableError",
    "write_records",
    "read_records",
    "records_to_csv",
    "method_spec",
    "reference_state",
    "run_convergence",
    "run_conditioning",
    "run_integrate",
    "cache_dir",
]

CSV_COLUMNS = (
    "method",
    "epsilon",
    "dt",
    "n_steps",
    "l2_error",
    "eoc",
    "n_iter_total",
    "mean_cond1",
    "eo_eps",
    "converged",
)

REFERENCE_SCHEME = "HB-I3DRK6-2s"
REFERENCE_REFINEMENT = 64


class ReferenceUnavailableError(RuntimeError):
    """The problem has no exact solution and the fine-grid fallback is off."""


@dataclass
class RunRecord:
    """One experiment row of the CSV schema.

    ``eoc`` is only set when a preceding row with a different step count
    exists; ``eo_eps`` only between decade-spaced epsilon rows.
    """

    method: str
    epsilon: float
    dt: float
    n_steps: int
    l2_error: float = None
    eoc: float = None
    n_iter_total: int = None
    mean_cond1: float = None
    eo_eps: float = None
    converged: bool = True

    def row(self) -> list:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, bool):
                return "true" if x else "false"
            if isinstance(x, float):
                return "" if math.isnan(x) else repr(x)
            return str(x)

        return [fmt(getattr(self, col)) for col in CSV_COLUMNS]


def write_records(records, target) -> None:
    """Write rows to a path or text file object, header first."""
    if hasattr(target, "write"):
        _write(records, target)
        return
    with open(target, "w", newline="") as handle:
        _write(records, handle)


def _write(records, handle) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.row())


def records_to_csv(records) -> str:
    buf = io.StringIO()
    _write(records, buf)
    return buf.getvalue()


def read_records(path):
    """Read a CSV produced by :func:`write_records` back into dicts."""
    rows = []
    with open(path, newline="") as handle:
        for raw in csv.DictReader(handle):
            row = {}
            for key, val in raw.items():
                if val == "" or val is None:
                    row[key] = None
                elif key == "method":
                    row[key] = val
                elif key == "converged":
                    row[key] = val == "true"
                elif key in ("n_steps", "n_iter_total"):
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows


def method_spec(
    scheme: str,
    strategy: str,
    formulation: str = "direct",
    coupling: str = "dimdrk",
    *,
    newton_cfg: NewtonConfig = None,
    halfwidth: int = None,
) -> MethodSpec:
    """Assemble a :class:`MethodSpec` from registry names."""
    return MethodSpec(
        tableau=builtin_tableau(scheme),
        strategy=StrategyKind(strategy),
        formulation=Formulation(formulation),
        coupling=Coupling(coupling),
        newton=newton_cfg or NewtonConfig(),
        stencil_halfwidth=halfwidth,
    )


# ---------------------------------------------------------------------------
# reference solutions
# ---------------------------------------------------------------------------

def cache_dir() -> Path:
    env = os.environ.get("MDRK_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "mdrk-lab"


def reference_state(model: FluxModel, t_end: float, n_finest: int, directory=None) -> np.ndarray:
    """Final-time reference state for ``model``.

    Uses the model's exact solution when present; otherwise integrates with
    rec-direct HB-I3DRK6-2s at ``REFERENCE_REFINEMENT * n_finest`` steps and
    caches the endpoint keyed by problem, epsilon, horizon and step count.
    """
    if model.reference is not None:
        return np.asarray(model.reference(t_end, model.epsilon), dtype=float)
    n_ref = REFERENCE_REFINEMENT * n_finest
    directory = Path(directory) if directory is not None else cache_dir()
    key = f"ref_{model.name}_eps={model.epsilon!r}_T={float(t_end)!r}_N={n_ref}.json"
    path = directory / key
    if path.exists():
        return np.array(json.loads(path.read_text()), dtype=float)
    spec = method_spec(REFERENCE_SCHEME, "rec", "direct", "dimdrk")
    y_ref, _ = mdrk.integrate(spec, model.with_t_end(t_end), n_ref)
    directory.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(map(float, y_ref))))
    return y_ref


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def run_convergence(
    scheme: str,
    strategy: str,
    formulation: str,
    coupling: str,
    problem: str,
    epsilon: float,
    t_end: float,
    n_list,
    *,
    halfwidth: int = None,
    newton_cfg: NewtonConfig = None,
    allow_fine_reference: bool = True,
    cache: Path = None,
) -> list:
    """Error-vs-resolution sweep against the problem reference.

    ``n_list`` must be strictly increasing; the observed order column holds
    ``log(err_prev/err)/log(n/n_prev)`` between consecutive converged rows.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"step counts must be strictly increasing: {n_list}")
    spec = method_spec(scheme, strategy, formulation, coupling,
                       newton_cfg=newton_cfg, halfwidth=halfwidth)
    model = make_problem(problem, epsilon).with_t_end(t_end)
    if model.reference is None and not allow_fine_reference:
        raise ReferenceUnavailableError(
            f"problem {problem!r} has no exact reference and the fine-grid "
            "fallback is disabled"
        )
    y_ref = reference_state(model, t_end, max(n_list), directory=cache)
    records = []
    prev = None
    for n in n_list:
        dt = t_end / n
        try:
            y, stats = mdrk.integrate(spec, model, n)
        except StepFailure as failure:
            stats = getattr(failure, "stats", None)
            records.append(
                RunRecord(
                    method=spec.method_id,
                    epsilon=model.epsilon,
                    dt=dt,
                    n_steps=n,
                    n_iter_total=stats.total_newton_iters if stats else None,
                    converged=False,
                )
            )
            prev = None
            continue
        err = float(np.linalg.norm(y - y_ref))
        eoc = None
        if prev is not None and err > 0.0 and prev[1] > 0.0:
            eoc = math.log(prev[1] / err) / math.log(n / prev[0])
        records.append(
            RunRecord(
                method=spec.method_id,
                epsilon=model.epsilon,
                dt=dt,
                n_steps=n,
                l2_error=err,
                eoc=eoc,
                n_iter_total=stats.total_newton_iters,
                converged=True,
            )
        )
        prev = (n, err)
    return records


def run_conditioning(
    scheme: str,
    strategy: str,
    formulation: str,
    coupling: str,
    problem: str,
    eps_list,
    t_end: float = 1.25,
    n_steps: int = 1,
    *,
    halfwidth: int = None,
    newton_cfg: NewtonConfig = None,
) -> list:
    """Mean Newton conditioning of the monitored solve across an eps sweep.

    The monitored solve is the last implicit stage for stage-at-a-time runs
    and the coupled system otherwise.  Non-converged and diverged runs stay in
    the output with ``converged=false``; the empirical order column relates
    consecutive rows.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError(f"epsilons must be strictly decreasing: {eps_list}")
    cfg = newton_cfg or NewtonConfig()
    spec = method_spec(scheme, strategy, formulation, coupling,
                       newton_cfg=cfg, halfwidth=halfwidth)
    # conditioning instrumentation runs on analytic Jacobians whenever the
    # variant supports them; the badly scaled regimes defeat finite
    # differences as a measurement of cond(F').
    if cfg.jacobian_mode == "fd":
        probe = make_problem(problem, eps_list[0])
        if mdrk.analytic_mode_reason(spec, probe) is None:
            cfg = replace(cfg, jacobian_mode="analytic")
            spec = method_spec(scheme, strategy, formulation, coupling,
                               newton_cfg=cfg, halfwidth=halfwidth)
    method_tag = f"{spec.method_id}+{cfg.jacobian_mode}"
    records = []
    for eps in eps_list:
        model = make_problem(problem, eps).with_t_end(t_end)
        dt = t_end / n_steps
        mean_cond = None
        iters = None
        ok = False
        try:
            _, stats = mdrk.integrate(
                spec, model, n_steps, keep_traces=True, raise_on_failure=False
            )
            iters = stats.total_newton_iters
            ok = stats.converged
            monitored = [t.monitored_report.mean_cond1 for t in stats.traces if t.reports]
            if monitored:
                mean_cond = float(np.mean(monitored))
        except newton.NewtonError:
            ok = False
        records.append(
            RunRecord(
                method=method_tag,
                epsilon=eps,
                dt=dt,
                n_steps=n_steps,
                n_iter_total=iters,
                mean_cond1=mean_cond,
                converged=ok,
            )
        )
    _fill_eo(records)
    return records


def _usable(value) -> bool:
    return value is not None and math.isfinite(value) and value > 0.0


def _fill_eo(records) -> None:
    for prev, cur in zip(records, records[1:]):
        if _usable(prev.mean_cond1) and _usable(cur.mean_cond1) and prev.epsilon > cur.epsilon:
            if math.isclose(prev.epsilon / cur.epsilon, 10.0, rel_tol=1e-6):
                cur.eo_eps = newton.empirical_order_eps(
                    {prev.epsilon: prev.mean_cond1, cur.epsilon: cur.mean_cond1}
                )[0]
            else:
                cur.eo_eps = math.log10(cur.mean_cond1 / prev.mean_cond1) / math.log10(
                    prev.epsilon / cur.epsilon
                )


def run_integrate(
    scheme: str,
    strategy: str,
    formulation: str,
    coupling: str,
    problem: str,
    epsilon: float,
    t_end: float,
    n_steps: int,
    *,
    halfwidth: int = None,
    newton_cfg: NewtonConfig = None,
    allow_fine_reference: bool = True,
    cache: Path = None,
):
    """One integration; returns ``(record, final_state, iters_per_step)``."""
    spec = method_spec(scheme, strategy, formulation, coupling,
                       newton_cfg=newton_cfg, halfwidth=halfwidth)
    model = make_problem(problem, epsilon).with_t_end(t_end)
    dt = t_end / n_steps
    try:
        y, stats = mdrk.integrate(spec, model, n_steps)
    except StepFailure as failure:
        stats = getattr(failure, "stats", None)
        record = RunRecord(
            method=spec.method_id,
            epsilon=epsilon,
            dt=dt,
            n_steps=n_steps,
            n_iter_total=stats.total_newton_iters if stats else None,
            converged=False,
        )
        return record, None, stats.iters_per_step if stats else []
    err = None
    if model.reference is not None:
        err = float(np.linalg.norm(y - model.reference(t_end, model.epsilon)))
    elif allow_fine_reference:
        y_ref = reference_state(model, t_end, n_steps, directory=cache)
        err = float(np.linalg.norm(y - y_ref))
    record = RunRecord(
        method=spec.method_id,
        epsilon=epsilon,
        dt=dt,
        n_steps=n_steps,
        l2_error=err,
        n_iter_total=stats.total_newton_iters,
        converged=stats.converged,
    )
    return record, y, stats.iters_per_step
