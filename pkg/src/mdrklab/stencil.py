"""Centered finite-difference weights for k-th time derivatives.

On the uniform nodes ``j = -p..p`` the weights ``delta[j]`` satisfy the moment
conditions ``sum_j delta_j j^m = k! * (m == k)`` for ``m = 0..2p``, so that
``sum_j delta_j f(t + j*h) / h^k`` approximates ``f^(k)(t)`` to order
``omega = 2p - 2*floor((k-1)/2)``.  The moment system is solved exactly over
the rationals; floating point only enters when the weights are applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = ["StencilWeights", "InvalidStencilError", "make_weights", "apply_weights"]


class InvalidStencilError(ValueError):
    """Raised for derivative/half-width combinations without a valid stencil."""


@dataclass(frozen=True)
class StencilWeights:
    """Weights of a centered difference for the k-th derivative.

    ``delta`` holds the 2p+1 coefficients for nodes ``j = -p..p``; the 1/dt^k
    scaling is applied by :func:`apply_weights`.  ``omega`` is the accuracy
    order of the approximation.
    """

    k: int
    p: int
    delta: np.ndarray
    omega: int

    @property
    def n_nodes(self) -> int:
        return 2 * self.p + 1


def min_halfwidth(k: int) -> int:
    """Smallest admissible half-width for a k-th derivative stencil."""
    return (k + 1) // 2


def _solve_rational(matrix, rhs):
    """Gaussian elimination with partial pivoting over Fractions."""
    n = len(rhs)
    aug = [list(row) + [val] for row, val in zip(matrix, rhs)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda i: abs(aug[i][col]))
        if aug[pivot][col] == 0:
            raise InvalidStencilError("singular moment system")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        for i in range(col + 1, n):
            factor = aug[i][col] / aug[col][col]
            if factor == 0:
                continue
            for j in range(col, n + 1):
                aug[i][j] -= factor * aug[col][j]
    x = [Fraction(0)] * n
    for i in range(n - 1, -1, -1):
        acc = aug[i][n] - sum(aug[i][j] * x[j] for j in range(i + 1, n))
        x[i] = acc / aug[i][i]
    return x


@lru_cache(maxsize=None)
def make_weights(k: int, p: int) -> StencilWeights:
    """Build the centered weights for the k-th derivative on 2p+1 nodes.

    Raises
    ------
    InvalidStencilError
        If ``k < 1`` or ``p`` is below the admissible minimum
        ``floor((k+1)/2)``.
    """
    if k < 1:
        raise InvalidStencilError(f"derivative order must be >= 1, got {k}")
    if p < min_halfwidth(k):
        raise InvalidStencilError(
            f"half-width p = {p} too small for derivative order {k}; "
            f"need p >= {min_halfwidth(k)}"
        )
    nodes = range(-p, p + 1)
    n = 2 * p + 1
    matrix = [[Fraction(j) ** m for j in nodes] for m in range(n)]
    rhs = [Fraction(math.factorial(k)) if m == k else Fraction(0) for m in range(n)]
    exact = _solve_rational(matrix, rhs)
    delta = np.array([float(x) for x in exact])
    delta.setflags(write=False)
    omega = 2 * p - 2 * ((k - 1) // 2)
    return StencilWeights(k=k, p=p, delta=delta, omega=omega)


def apply_weights(w: StencilWeights, values, dt: float) -> np.ndarray:
    """Evaluate ``(1/dt^k) * sum_j delta_j values[j]`` componentwise.

    ``values`` must hold exactly 2p+1 states (scalars or equal-length
    vectors) ordered from node ``-p`` to node ``p``.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    try:
        vals = np.asarray(values, dtype=float)
    except ValueError as exc:
        raise ValueError("samples have mismatched dimensions") from exc
    if vals.shape[0] != w.n_nodes:
        raise ValueError(f"expected {w.n_nodes} samples, got {vals.shape[0]}")
    return (w.delta @ vals.reshape(w.n_nodes, -1)).reshape(vals.shape[1:]) / dt**w.k
