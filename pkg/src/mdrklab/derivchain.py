"""Higher time derivatives of an ODE flux under three strategies.

For ``y' = flux(y)`` the k-th time derivative can be obtained

* exactly from the flux derivative tensors (``EJ``), written out up to the
  fourth derivative;
* from the recursive relation ``y^(k) = J_{k-2}(y) y'`` with
  ``J_m = [d^m flux/dt^m]'`` the model-supplied matrices (``REC``);
* without any Jacobian information (``AT``): centered differences of flux
  samples taken along a local Taylor prediction, which reuses the lower
  derivatives already computed.

The AT route only needs flux evaluations, at the cost of an O(dt^(r-k+1))
approximation error in the k-th derivative of an r-derivative chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .odesys import FluxModel
from .stencil import make_weights

__all__ = [
    "StrategyKind",
    "DerivStrategy",
    "MissingCapabilityError",
    "UnsupportedOrderError",
    "derivatives_direct",
    "derivatives_direct_with_jacobians",
    "psi_dersol",
    "psi_dersol_jacobians",
]


class StrategyKind(str, Enum):
    EJ = "ej"
    REC = "rec"
    AT = "at"


class MissingCapabilityError(ValueError):
    """The model lacks an operator the chosen strategy needs."""


class UnsupportedOrderError(ValueError):
    """Derivative order outside what the strategy implements."""


@dataclass(frozen=True)
class DerivStrategy:
    """How to evaluate the derivative chain up to order ``max_order``.

    ``stencil_halfwidth`` and ``dt`` matter only for the AT strategy: the
    half-width defaults to the smallest admissible value ``floor(max_order/2)``
    and the timestep scales the Taylor prediction of the flux samples.
    """

    kind: StrategyKind
    max_order: int
    stencil_halfwidth: int = None
    dt: float = None

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError(f"max_order must be >= 1, got {self.max_order}")
        if self.kind is StrategyKind.AT and self.max_order >= 2:
            if self.dt is None or self.dt <= 0.0:
                raise ValueError("AT strategy needs a positive dt")
            if self.halfwidth < self.max_order // 2:
                raise ValueError(
                    f"stencil half-width {self.halfwidth} too small for "
                    f"max_order {self.max_order}; need >= {self.max_order // 2}"
                )

    @property
    def halfwidth(self) -> int:
        if self.stencil_halfwidth is not None:
            return self.stencil_halfwidth
        return max(self.max_order // 2, 1)


def _require(strategy: DerivStrategy, model: FluxModel) -> None:
    r = strategy.max_order
    if r == 1:
        return
    if strategy.kind is StrategyKind.AT:
        return
    if model.flux_jacobian is None:
        raise MissingCapabilityError(
            f"model {model.name!r} has no flux_jacobian (needed by {strategy.kind.value})"
        )
    if strategy.kind is StrategyKind.EJ:
        if r > 4:
            raise UnsupportedOrderError(
                f"exact-Jacobian chain implemented up to order 4, got {r}"
            )
        tensors = model.deriv_tensors
        if r >= 3 and (tensors is None or tensors[0] is None):
            raise MissingCapabilityError(
                f"model {model.name!r} has no second-derivative tensor action "
                f"(deriv_tensors[0], needed for order {r})"
            )
        if r >= 4 and (tensors is None or len(tensors) < 2 or tensors[1] is None):
            raise MissingCapabilityError(
                f"model {model.name!r} has no third-derivative tensor action "
                f"(deriv_tensors[1], needed for order {r})"
            )
    else:  # REC
        have = len(model.time_deriv_jacobians or ())
        if r >= 3 and have < r - 2:
            raise MissingCapabilityError(
                f"model {model.name!r} supplies {have} time-derivative Jacobians; "
                f"order {r} needs {r - 2}"
            )


def _psi_exact(strategy, model, y, lower, k):
    """Psi_k for the EJ/REC strategies; ``lower`` holds orders 1..k-1."""
    jac = model.flux_jacobian
    if k == 2:
        return jac(y) @ lower[0]
    if strategy.kind is StrategyKind.EJ:
        action2, action3 = model.deriv_tensors[0], (model.deriv_tensors + (None,))[1]
        if k == 3:
            return action2(y, lower[0], lower[0]) + jac(y) @ lower[1]
        if k == 4:
            return (
                action3(y, lower[0], lower[0], lower[0])
                + 3.0 * action2(y, lower[0], lower[1])
                + jac(y) @ lower[2]
            )
        raise UnsupportedOrderError(f"exact-Jacobian chain implemented up to order 4, got {k}")
    return model.time_deriv_jacobians[k - 3](y, lower) @ lower[0]


def _taylor_shift(y, lower, dt, j, k):
    """Taylor prediction of the state at offset j*dt using orders 1..k-1."""
    shifted = np.array(y, dtype=float)
    for m in range(1, k):
        shifted += (j * dt) ** m / math.factorial(m) * lower[m - 1]
    return shifted


def _psi_at(model, y, lower, k, p, dt):
    """Centered-difference estimate of the k-th derivative from flux samples."""
    w = make_weights(k - 1, p)
    acc = np.zeros_like(np.asarray(y, dtype=float))
    for idx, j in enumerate(range(-p, p + 1)):
        acc = acc + w.delta[idx] * model.flux(_taylor_shift(y, lower, dt, j, k))
    return acc / dt ** (k - 1)


def derivatives_direct(strategy: DerivStrategy, model: FluxModel, y) -> list:
    """Evaluate ``[y^(1), ..., y^(r)]`` at the state ``y``.

    The first derivative is always ``flux(y)``; higher orders follow the
    strategy.  Raises :class:`MissingCapabilityError` when the model lacks a
    required operator and :class:`UnsupportedOrderError` beyond the
    implemented exact-Jacobian order.
    """
    _require(strategy, model)
    y = np.asarray(y, dtype=float)
    if y.shape != (model.dim,):
        raise ValueError(f"state has shape {y.shape}, expected ({model.dim},)")
    ders = [model.flux(y)]
    for k in range(2, strategy.max_order + 1):
        if strategy.kind is StrategyKind.AT:
            ders.append(_psi_at(model, y, ders, k, strategy.halfwidth, strategy.dt))
        else:
            ders.append(_psi_exact(strategy, model, y, ders, k))
    return ders


def derivatives_direct_with_jacobians(strategy: DerivStrategy, model: FluxModel, y):
    """Derivative chain plus the state Jacobian of every chain member.

    Returns ``(ders, jacs)`` with ``jacs[k-1]`` the total derivative of
    ``y^(k)`` with respect to ``y``.  Supported for the AT strategy (chain
    rule through the flux samples, needing only ``flux_jacobian``) and the
    exact-Jacobian strategy up to order 3 (order 4 would need the fourth flux
    derivative, which models do not carry).
    """
    _require(strategy, model)
    if model.flux_jacobian is None:
        raise MissingCapabilityError(
            f"model {model.name!r} has no flux_jacobian (needed for analytic "
            "chain Jacobians)"
        )
    y = np.asarray(y, dtype=float)
    if y.shape != (model.dim,):
        raise ValueError(f"state has shape {y.shape}, expected ({model.dim},)")
    r = strategy.max_order
    jac = model.flux_jacobian
    ders = [model.flux(y)]
    jacs = [np.asarray(jac(y), dtype=float)]
    if strategy.kind is StrategyKind.AT:
        p, dt = strategy.halfwidth, strategy.dt
        eye = np.eye(model.dim)
        for k in range(2, r + 1):
            w = make_weights(k - 1, p)
            val = np.zeros(model.dim)
            der = np.zeros((model.dim, model.dim))
            for idx, j in enumerate(range(-p, p + 1)):
                shifted = _taylor_shift(y, ders, dt, j, k)
                sens = eye.copy()
                for m in range(1, k):
                    sens = sens + (j * dt) ** m / math.factorial(m) * jacs[m - 1]
                val = val + w.delta[idx] * model.flux(shifted)
                der = der + w.delta[idx] * (np.asarray(jac(shifted), dtype=float) @ sens)
            ders.append(val / dt ** (k - 1))
            jacs.append(der / dt ** (k - 1))
        return ders, jacs
    if strategy.kind is StrategyKind.REC:
        raise MissingCapabilityError(
            "analytic chain Jacobians for the recursive strategy would need "
            "derivatives of the supplied matrices; use finite differences"
        )
    if r > 3:
        raise MissingCapabilityError(
            "analytic exact-Jacobian chain Jacobians stop at order 3 (order 4 "
            "needs the fourth flux derivative); use finite differences"
        )
    for k in range(2, r + 1):
        ders.append(_psi_exact(strategy, model, y, ders, k))
        partials = _psi_exact_partials(strategy, model, y, ders[:-1], k)
        total = partials[0]
        for m in range(1, k):
            total = total + partials[m] @ jacs[m - 1]
        jacs.append(total)
    return ders, jacs


def _action_matrix(action, y, u, dim):
    """Matrix with columns ``action(y, e_j, u)``."""
    eye = np.eye(dim)
    return np.column_stack([action(y, eye[:, j], u) for j in range(dim)])


def _psi_exact_partials(strategy, model, y, lower, k):
    """Partial derivatives of Psi_k w.r.t. ``y`` and each lower derivative."""
    dim = model.dim
    jac = np.asarray(model.flux_jacobian(y), dtype=float)
    if k == 2:
        if strategy.kind is StrategyKind.EJ:
            action2 = model.deriv_tensors[0]
            d_y = _action_matrix(action2, y, lower[0], dim)
        else:
            raise MissingCapabilityError(
                "analytic partials are only available for the exact-Jacobian strategy"
            )
        return [d_y, jac]
    if k == 3 and strategy.kind is StrategyKind.EJ:
        action2, action3 = model.deriv_tensors[0], model.deriv_tensors[1]
        eye = np.eye(dim)
        d_y = np.column_stack(
            [
                action3(y, eye[:, j], lower[0], lower[0]) + action2(y, eye[:, j], lower[1])
                for j in range(dim)
            ]
        )
        d_y1 = 2.0 * _action_matrix(action2, y, lower[0], dim)
        return [d_y, d_y1, jac]
    raise MissingCapabilityError(
        f"analytic partials unavailable for strategy {strategy.kind.value} at order {k}"
    )


def psi_dersol(strategy: DerivStrategy, model: FluxModel, z, k: int) -> np.ndarray:
    """Right-hand side of the k-th derivative relation in z-variables.

    For EJ/REC the entries of ``z = [z_0, ..., z_{k-1}]`` are read as the
    state and its unscaled derivatives.  For AT the scaled convention
    ``z_m ~ dt^(m-1) * y^(m)`` applies and the returned value carries the same
    ``dt^(k-1)`` scaling, so the dt powers inside the stencil cancel.
    """
    _require(strategy, model)
    if not 2 <= k <= strategy.max_order:
        raise UnsupportedOrderError(f"relation order {k} outside 2..{strategy.max_order}")
    if len(z) < k:
        raise ValueError(f"need {k} z-entries for order {k}, got {len(z)}")
    z0 = np.asarray(z[0], dtype=float)
    if z0.shape != (model.dim,):
        raise ValueError(f"state has shape {z0.shape}, expected ({model.dim},)")
    lower = [np.asarray(v, dtype=float) for v in z[1:k]]
    if strategy.kind is not StrategyKind.AT:
        return _psi_exact(strategy, model, z0, lower, k)
    p, dt = strategy.halfwidth, strategy.dt
    w = make_weights(k - 1, p)
    acc = np.zeros_like(z0)
    for idx, j in enumerate(range(-p, p + 1)):
        shifted = np.array(z0)
        for m in range(1, k):
            shifted += dt * float(j) ** m / math.factorial(m) * lower[m - 1]
        acc = acc + w.delta[idx] * model.flux(shifted)
    return acc


def psi_dersol_jacobians(strategy: DerivStrategy, model: FluxModel, z, k: int) -> list:
    """Partial derivatives of the k-th z-relation w.r.t. ``z_0 .. z_{k-1}``.

    AT needs only ``flux_jacobian``; the exact-Jacobian strategy is covered
    up to order 3.  The recursive strategy has no analytic form here.
    """
    _require(strategy, model)
    if not 2 <= k <= strategy.max_order:
        raise UnsupportedOrderError(f"relation order {k} outside 2..{strategy.max_order}")
    if model.flux_jacobian is None:
        raise MissingCapabilityError(
            f"model {model.name!r} has no flux_jacobian (needed for analytic "
            "relation Jacobians)"
        )
    z0 = np.asarray(z[0], dtype=float)
    lower = [np.asarray(v, dtype=float) for v in z[1:k]]
    if strategy.kind is StrategyKind.AT:
        p, dt = strategy.halfwidth, strategy.dt
        w = make_weights(k - 1, p)
        parts = [np.zeros((model.dim, model.dim)) for _ in range(k)]
        for idx, j in enumerate(range(-p, p + 1)):
            shifted = np.array(z0)
            for m in range(1, k):
                shifted += dt * float(j) ** m / math.factorial(m) * lower[m - 1]
            fj = w.delta[idx] * np.asarray(model.flux_jacobian(shifted), dtype=float)
            parts[0] += fj
            for m in range(1, k):
                parts[m] += fj * (dt * float(j) ** m / math.factorial(m))
        return parts
    return _psi_exact_partials(strategy, model, z0, lower, k)
