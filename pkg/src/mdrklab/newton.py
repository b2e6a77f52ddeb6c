"""Damped Newton solver for dense nonlinear systems, with conditioning stats.

Each iteration factors the Jacobian with partially pivoted LU, records the
1-norm condition number (exact, via the explicit inverse recovered column by
column from the factors) and applies a backtracking-damped update.  The
systems solved here are tiny, so exact condition numbers are cheap and the
iteration history is kept in full.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

__all__ = [
    "NewtonConfig",
    "NewtonReport",
    "NewtonError",
    "SingularJacobianError",
    "NonFiniteResidualError",
    "solve",
    "fd_jacobian",
    "empirical_order_eps",
    "DIVERGENCE_NORM",
]

DIVERGENCE_NORM = 1e12

_FD_DEFAULT_SCALE = float(np.sqrt(np.finfo(float).eps))


class NewtonError(RuntimeError):
    pass


class SingularJacobianError(NewtonError):
    """LU factorization met a pivot below the singularity threshold.

    Carries the partial :class:`NewtonReport` on ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonFiniteResidualError(NewtonError):
    """The residual produced NaN or infinity where a finite value is required."""


@dataclass
class NewtonConfig:
    """Stopping rules and linearization options.

    The iteration stops once ``||F|| < 10**-n_tol`` or
    ``||F||/||F(Y0)|| < 10**-n_tol0`` (whichever comes first), or at
    ``max_iter``.  Damping tries the full step first and halves it while the
    residual norm fails to decrease; below ``min_step`` the full step is taken
    regardless.
    """

    n_tol: int = 12
    n_tol0: int = 12
    max_iter: int = 1000
    damping: bool = True
    backtrack_factor: float = 0.5
    min_step: float = 2.0**-10
    jacobian_mode: str = "fd"  # "fd" or "analytic"
    fd_step_scale: float = _FD_DEFAULT_SCALE

    def __post_init__(self):
        if self.n_tol < 1 or self.n_tol0 < 1:
            raise ValueError("n_tol and n_tol0 must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.jacobian_mode not in ("fd", "analytic"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


@dataclass
class NewtonReport:
    """Outcome of one nonlinear solve.

    ``residuals[i]`` is the 2-norm of the residual after update ``i+1`` and
    ``cond1[i]`` the 1-norm condition number of the Jacobian factored for that
    update, so both lists have length ``n_iter``.  ``divergence_iter`` is set
    when the residual exceeded ``DIVERGENCE_NORM`` or turned non-finite.
    """

    converged: bool
    n_iter: int
    residuals: list = field(default_factory=list)
    cond1: list = field(default_factory=list)
    mean_cond1: float = math.nan
    divergence_iter: int = None


def _norm1(a: np.ndarray) -> float:
    return float(np.abs(a).sum(axis=0).max())


def fd_jacobian(residual, y, fd_step_scale: float = _FD_DEFAULT_SCALE, f0=None) -> np.ndarray:
    """Forward-difference Jacobian, one residual evaluation per column.

    Column ``j`` is ``(F(y + h_j e_j) - F(y)) / h_j`` with
    ``h_j = fd_step_scale * (1 + |y_j|)``.
    """
    y = np.asarray(y, dtype=float)
    if f0 is None:
        f0 = residual(y)
    f0 = np.asarray(f0, dtype=float)
    if not np.all(np.isfinite(f0)):
        raise NonFiniteResidualError("residual is not finite at the expansion point")
    jac = np.empty((f0.size, y.size))
    for j in range(y.size):
        h = fd_step_scale * (1.0 + abs(y[j]))
        yp = y.copy()
        yp[j] += h
        fj = np.asarray(residual(yp), dtype=float)
        if not np.all(np.isfinite(fj)):
            raise NonFiniteResidualError(
                f"residual is not finite at the perturbed point (column {j})"
            )
        jac[:, j] = (fj - f0) / h
    return jac


def solve(residual, y_init, cfg: NewtonConfig, jacobian=None):
    """Solve ``residual(y) = 0`` by damped Newton iteration.

    Returns ``(y, report)``.  The Jacobian comes from :func:`fd_jacobian`
    unless ``cfg.jacobian_mode == "analytic"``, in which case ``jacobian(y)``
    must be supplied.  Divergence (residual above :data:`DIVERGENCE_NORM` or
    non-finite after an update, including inside the finite-difference
    sampling) ends the iteration with ``converged=False`` and
    ``divergence_iter`` set; only a singular Jacobian or a non-finite residual
    at the initial point raise.
    """
    if cfg.jacobian_mode == "analytic" and jacobian is None:
        raise ValueError("jacobian_mode 'analytic' requires a jacobian callable")
    y = np.array(y_init, dtype=float)
    f = np.asarray(residual(y), dtype=float)
    if f.shape != y.shape:
        raise ValueError(f"residual shape {f.shape} does not match state shape {y.shape}")
    if not np.all(np.isfinite(f)):
        raise NonFiniteResidualError("residual is not finite at the initial point")
    fnorm = float(np.linalg.norm(f))
    f0norm = fnorm
    atol = 10.0 ** (-cfg.n_tol)
    rtol = 10.0 ** (-cfg.n_tol0)
    residuals = []
    conds = []
    converged = fnorm < atol
    divergence_iter = None

    it = 0
    while not converged and divergence_iter is None and it < cfg.max_iter:
        it += 1
        try:
            if cfg.jacobian_mode == "analytic":
                jac = np.asarray(jacobian(y), dtype=float)
            else:
                jac = fd_jacobian(residual, y, cfg.fd_step_scale, f0=f)
        except NonFiniteResidualError:
            divergence_iter = it
            break
        if not np.all(np.isfinite(jac)):
            divergence_iter = it
            break
        with warnings.catch_warnings():
            # exact singularity is handled by the pivot check below
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(jac)
        scale = _norm1(jac)
        if np.min(np.abs(np.diag(lu))) <= 1e3 * np.finfo(float).eps * scale:
            raise SingularJacobianError(
                f"Newton Jacobian numerically singular at iteration {it}",
                report=NewtonReport(
                    converged=False,
                    n_iter=it - 1,
                    residuals=residuals,
                    cond1=conds,
                    mean_cond1=float(np.mean(conds)) if conds else math.nan,
                    divergence_iter=it,
                ),
            )
        inv = lu_solve((lu, piv), np.eye(y.size))
        conds.append(scale * _norm1(inv))
        step = lu_solve((lu, piv), -f)

        eta = 1.0
        while True:
            cand = y + eta * step
            fc = np.asarray(residual(cand), dtype=float)
            fcnorm = float(np.linalg.norm(fc))
            if not cfg.damping or (np.isfinite(fcnorm) and fcnorm < fnorm):
                break
            eta *= cfg.backtrack_factor
            if eta < cfg.min_step:
                cand = y + step
                fc = np.asarray(residual(cand), dtype=float)
                fcnorm = float(np.linalg.norm(fc))
                break
        y, f, fnorm = cand, fc, fcnorm
        residuals.append(fnorm)
        if not np.isfinite(fnorm) or fnorm > DIVERGENCE_NORM:
            divergence_iter = it
            break
        if fnorm < atol or fnorm < rtol * f0norm:
            converged = True

    report = NewtonReport(
        converged=converged,
        n_iter=it,
        residuals=residuals,
        cond1=conds,
        mean_cond1=float(np.mean(conds)) if conds else math.nan,
        divergence_iter=divergence_iter,
    )
    return y, report


def empirical_order_eps(means) -> list:
    """Empirical order of a conditioning mean across a decade epsilon sweep.

    ``means`` maps each epsilon to its mean condition number; the epsilons
    must form a decreasing decade sequence ``eps, eps/10, ...``.  Entry ``i``
    of the result is ``log10(mu(eps_{i+1}) / mu(eps_i))``.
    """
    if hasattr(means, "items"):
        pairs = sorted(means.items(), key=lambda kv: -kv[0])
    else:
        pairs = sorted(means, key=lambda kv: -kv[0])
    if len(pairs) < 2:
        raise ValueError("need at least two (epsilon, mean) entries")
    for (e_prev, _), (e_next, _) in zip(pairs, pairs[1:]):
        if not math.isclose(e_prev / e_next, 10.0, rel_tol=1e-6):
            raise ValueError(
                f"epsilons must fall by decades; got {e_prev!r} -> {e_next!r}"
            )
    return [
        math.log10(mu_next / mu_prev)
        for (_, mu_prev), (_, mu_next) in zip(pairs, pairs[1:])
    ]
