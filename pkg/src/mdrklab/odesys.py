"""Benchmark ODE systems with an epsilon-scaled stiff part.

Every model is a :class:`FluxModel`: a flux ``y' = flux(y)`` of dimension
``dim`` whose stiff contribution carries a ``1/epsilon`` factor, together with
whatever analytic derivative information the model can offer.  The optional
operators are

``flux_jacobian``
    ``y -> (dim, dim)`` Jacobian of the flux.
``deriv_tensors``
    Pair of tensor actions ``(action2, action3)``: ``action2(y, u, v)`` is the
    second-derivative tensor contracted with two vectors, ``action3`` the
    third contracted with three.  These feed the exact-Jacobian derivative
    chain up to the fourth time derivative.
``time_deriv_jacobians``
    Callbacks ``(y, derivs) -> (dim, dim)`` returning the Jacobian of the m-th
    total time derivative of the flux with respect to the state, for
    ``m = 1, 2, ...`` (the m = 0 case is ``flux_jacobian``).  They power the
    recursive derivative chain.  ``derivs`` may carry already-computed
    derivative values ``[y', y'', ...]`` for reuse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "FluxModel",
    "UnknownProblemError",
    "pareschi_russo",
    "dahlquist_scaled",
    "two_var_model",
    "van_der_pol",
    "kaps",
    "make_problem",
    "PROBLEM_NAMES",
    "time_derivative_jacobians",
]


class UnknownProblemError(KeyError):
    """Raised for problem names missing from the registry."""


@dataclass(frozen=True)
class FluxModel:
    """An autonomous ODE system ``y' = flux(y)`` with stiffness ``epsilon``.

    ``reference(t, epsilon)`` returns an exact or high-accuracy solution when
    the model has one.  ``provenance`` is ``"paper"`` for problems defined in
    the source material and ``"derived"`` for standard textbook additions.
    All function fields must be pure; models are safe to share.
    """

    name: str
    dim: int
    epsilon: float
    flux: object
    y0: np.ndarray
    t_end: float
    flux_jacobian: object = None
    deriv_tensors: tuple = None
    time_deriv_jacobians: tuple = None
    reference: object = None
    provenance: str = "paper"

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float)
        if y0.shape != (self.dim,):
            raise ValueError(f"y0 has shape {y0.shape}, expected ({self.dim},)")
        y0.setflags(write=False)
        object.__setattr__(self, "y0", y0)

    def with_t_end(self, t_end: float) -> "FluxModel":
        return replace(self, t_end=float(t_end))


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return epsilon


def time_derivative_jacobians(flux, flux_jacobian, action2, action3):
    """Assemble the Jacobians of the first two total time derivatives.

    Given the flux Jacobian and the tensor actions, returns callbacks
    ``(j1, j2)`` with ``j1(y, derivs)`` the Jacobian of ``t -> flux(y(t))``
    differentiated w.r.t. the state and ``j2`` the same for the second time
    derivative.  Built column by column via the chain rule, so the matrices
    are exact wherever the supplied operators are.
    """

    def _chain(y, derivs, order):
        vals = list(derivs) if derivs is not None else []
        if len(vals) < 1:
            vals.append(flux(y))
        if order >= 2 and len(vals) < 2:
            vals.append(flux_jacobian(y) @ vals[0])
        return vals

    def j1(y, derivs=None):
        y = np.asarray(y, dtype=float)
        y1 = _chain(y, derivs, 1)[0]
        jac = flux_jacobian(y)
        n = y.size
        cols = np.empty((n, n))
        eye = np.eye(n)
        for j in range(n):
            cols[:, j] = action2(y, eye[j], y1) + jac @ jac[:, j]
        return cols

    def j2(y, derivs=None):
        y = np.asarray(y, dtype=float)
        vals = _chain(y, derivs, 2)
        y1, y2 = vals[0], vals[1]
        jac = flux_jacobian(y)
        m1 = j1(y, vals)
        n = y.size
        cols = np.empty((n, n))
        eye = np.eye(n)
        for j in range(n):
            cols[:, j] = (
                action3(y, eye[j], y1, y1)
                + 2.0 * action2(y, jac[:, j], y1)
                + action2(y, eye[j], y2)
                + jac @ m1[:, j]
            )
        return cols

    return (j1, j2)


# ---------------------------------------------------------------------------
# Pareschi-Russo
# ---------------------------------------------------------------------------

def pareschi_russo(epsilon: float) -> FluxModel:
    """Pareschi-Russo relaxation problem.

    ``y1' = -y2``, ``y2' = y1 + (sin(y1) - y2)/epsilon`` with initial state
    ``(pi/2, 1)``.  The only nonlinearity is ``sin(y1)``, so all higher flux
    derivatives act through that single entry.  No closed-form solution; use
    a fine-grid reference.
    """
    eps = _check_epsilon(epsilon)

    def flux(y):
        return np.array([-y[1], y[0] + (math.sin(y[0]) - y[1]) / eps])

    def jac(y):
        return np.array([[0.0, -1.0], [1.0 + math.cos(y[0]) / eps, -1.0 / eps]])

    def action2(y, u, v):
        return np.array([0.0, -math.sin(y[0]) / eps * u[0] * v[0]])

    def action3(y, u, v, w):
        return np.array([0.0, -math.cos(y[0]) / eps * u[0] * v[0] * w[0]])

    return FluxModel(
        name="pr",
        dim=2,
        epsilon=eps,
        flux=flux,
        flux_jacobian=jac,
        deriv_tensors=(action2, action3),
        time_deriv_jacobians=time_derivative_jacobians(flux, jac, action2, action3),
        y0=np.array([math.pi / 2.0, 1.0]),
        t_end=5.0,
    )


# ---------------------------------------------------------------------------
# epsilon-scaled Dahlquist test
# ---------------------------------------------------------------------------

def dahlquist_scaled(lam: float, epsilon: float) -> FluxModel:
    """Scalar test problem ``y' = (lam/epsilon) y`` with ``y(0) = 1``.

    Exact solution ``exp((lam/epsilon) t)``; every derivative operator is
    analytic, and the k-th time derivative is ``(lam/epsilon)^k y``.
    """
    eps = _check_epsilon(epsilon)
    z = float(lam) / eps

    def flux(y):
        return z * np.asarray(y, dtype=float)

    def jac(y):
        return np.array([[z]])

    def action2(y, u, v):
        return np.zeros(1)

    def action3(y, u, v, w):
        return np.zeros(1)

    def reference(t, epsilon=eps):
        return np.array([math.exp(float(lam) / epsilon * t)])

    time_jacs = tuple(
        (lambda m: (lambda y, derivs=None: np.array([[z ** (m + 1)]])))(m)
        for m in range(1, 9)
    )
    return FluxModel(
        name="dahlquist",
        dim=1,
        epsilon=eps,
        flux=flux,
        flux_jacobian=jac,
        deriv_tensors=(action2, action3),
        time_deriv_jacobians=time_jacs,
        reference=reference,
        y0=np.array([1.0]),
        t_end=1.0,
    )


# ---------------------------------------------------------------------------
# two-variable analysis system
# ---------------------------------------------------------------------------

def two_var_model(
    alpha: float,
    g,
    epsilon: float,
    *,
    g_grad,
    g_hess=None,
    g_third=None,
    y0=(1.0, 0.0),
    t_end: float = 1.0,
    name: str = "two-var",
    provenance: str = "paper",
    reference=None,
) -> FluxModel:
    """System ``y1' = y2``, ``y2' = alpha*y1 + g(y1, y2)/epsilon``.

    ``g`` is a smooth scalar function of two variables and ``g_grad(u, v)``
    its gradient ``(g_u, g_v)``.  Optional ``g_hess(u, v) -> (g_uu, g_uv,
    g_vv)`` and ``g_third(u, v) -> (g_uuu, g_uuv, g_uvv, g_vvv)`` unlock the
    tensor actions and the recursive-chain matrices.
    """
    eps = _check_epsilon(epsilon)
    alpha = float(alpha)

    def flux(y):
        return np.array([y[1], alpha * y[0] + g(y[0], y[1]) / eps])

    def jac(y):
        gu, gv = g_grad(y[0], y[1])
        return np.array([[0.0, 1.0], [alpha + gu / eps, gv / eps]])

    action2 = action3 = None
    time_jacs = None
    if g_hess is not None:

        def action2(y, u, v):
            guu, guv, gvv = g_hess(y[0], y[1])
            contracted = guu * u[0] * v[0] + guv * (u[0] * v[1] + u[1] * v[0]) + gvv * u[1] * v[1]
            return np.array([0.0, contracted / eps])

    if g_hess is not None and g_third is not None:

        def action3(y, u, v, w):
            guuu, guuv, guvv, gvvv = g_third(y[0], y[1])
            contracted = (
                guuu * u[0] * v[0] * w[0]
                + guuv * (u[0] * v[0] * w[1] + u[0] * v[1] * w[0] + u[1] * v[0] * w[0])
                + guvv * (u[0] * v[1] * w[1] + u[1] * v[0] * w[1] + u[1] * v[1] * w[0])
                + gvvv * u[1] * v[1] * w[1]
            )
            return np.array([0.0, contracted / eps])

        time_jacs = time_derivative_jacobians(flux, jac, action2, action3)

    return FluxModel(
        name=name,
        dim=2,
        epsilon=eps,
        flux=flux,
        flux_jacobian=jac,
        deriv_tensors=(action2, action3) if action2 is not None else None,
        time_deriv_jacobians=time_jacs,
        reference=reference,
        y0=np.asarray(y0, dtype=float),
        t_end=t_end,
        provenance=provenance,
    )


def van_der_pol(epsilon: float) -> FluxModel:
    """Stiff van der Pol oscillator in the two-variable form.

    ``g(y1, y2) = (1 - y1^2) y2 - y1`` with ``alpha = 0``.  The initial state
    uses the standard smooth-start expansion ``y2(0) = -2/3 + 10 eps/81 -
    292 eps^2/2187`` so no initial layer pollutes error measurements.
    """
    eps = _check_epsilon(epsilon)
    v0 = -2.0 / 3.0 + 10.0 * eps / 81.0 - 292.0 * eps**2 / 2187.0
    return two_var_model(
        alpha=0.0,
        g=lambda u, v: (1.0 - u * u) * v - u,
        epsilon=eps,
        g_grad=lambda u, v: (-2.0 * u * v - 1.0, 1.0 - u * u),
        g_hess=lambda u, v: (-2.0 * v, -2.0 * u, 0.0),
        g_third=lambda u, v: (0.0, -2.0, 0.0, 0.0),
        y0=(2.0, v0),
        t_end=0.5,
        name="vdp",
        provenance="derived",
    )


# ---------------------------------------------------------------------------
# Kaps problem
# ---------------------------------------------------------------------------

def kaps(epsilon: float) -> FluxModel:
    """Kaps problem with the exact solution ``(exp(-2t), exp(-t))``.

    ``y1' = -(2 + 1/eps) y1 + y2^2/eps``, ``y2' = y1 - y2 - y2^2`` from
    ``y0 = (1, 1)``; the exact solution is independent of ``epsilon``.
    """
    eps = _check_epsilon(epsilon)

    def flux(y):
        return np.array(
            [-(2.0 + 1.0 / eps) * y[0] + y[1] * y[1] / eps, y[0] - y[1] - y[1] * y[1]]
        )

    def jac(y):
        return np.array([[-(2.0 + 1.0 / eps), 2.0 * y[1] / eps], [1.0, -1.0 - 2.0 * y[1]]])

    def action2(y, u, v):
        return np.array([2.0 * u[1] * v[1] / eps, -2.0 * u[1] * v[1]])

    def action3(y, u, v, w):
        return np.zeros(2)

    def reference(t, epsilon=eps):
        return np.array([math.exp(-2.0 * t), math.exp(-t)])

    return FluxModel(
        name="kaps",
        dim=2,
        epsilon=eps,
        flux=flux,
        flux_jacobian=jac,
        deriv_tensors=(action2, action3),
        time_deriv_jacobians=time_derivative_jacobians(flux, jac, action2, action3),
        reference=reference,
        y0=np.array([1.0, 1.0]),
        t_end=1.0,
        provenance="derived",
    )


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

PROBLEM_NAMES = ("pr", "dahlquist", "vdp", "kaps")


def make_problem(name: str, epsilon: float, *, lam: float = -1.0) -> FluxModel:
    """Build a registry problem by name (``lam`` only affects ``dahlquist``)."""
    if name == "pr":
        return pareschi_russo(epsilon)
    if name == "dahlquist":
        return dahlquist_scaled(lam, epsilon)
    if name == "vdp":
        return van_der_pol(epsilon)
    if name == "kaps":
        return kaps(epsilon)
    raise UnknownProblemError(
        f"unknown problem {name!r}; available: {', '.join(PROBLEM_NAMES)}"
    )
