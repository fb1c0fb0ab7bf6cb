"""Orthonormal exponentiated-Hermite bases on R and R^N.

Basis functions are h_n = exp(-H_n(xi)/sqrt(n!)) with xi the standardized
state, using the probabilist's Hermite polynomials.  They are orthonormal
under the Gaussian measure that standardizes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Sequence

import numpy as np

from .elements import BayesElement, element_grad, element_hess
from .measures import GaussianMeasure
from .quadrature import QuadratureSpec, measure_nodes

_MAX_ND_ORDER = 3
_MAX_ND_DIM = 3


def _sqrt_factorial(n: int) -> float:
    # exact up to 20!, log-gamma beyond (not reachable at desk scale)
    if n <= 20:
        return math.sqrt(float(math.factorial(n)))
    return math.exp(0.5 * math.lgamma(n + 1))


def hermite_poly(n: int, xi) -> np.ndarray:
    """Probabilist's Hermite polynomial H_n via H_{k+1} = xi H_k - k H_{k-1}."""
    if n < 0:
        raise ValueError("order must be nonnegative")
    xi = np.asarray(xi, dtype=float)
    h_prev = np.ones_like(xi)
    if n == 0:
        return h_prev
    h = xi.copy()
    for k in range(1, n):
        h, h_prev = xi * h - k * h_prev, h
    return h


def hermite_design(max_n: int, xi: np.ndarray) -> np.ndarray:
    """All of H_0..H_max stacked as rows: shape (max_n + 1, len(xi))."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty((max_n + 1, xi.size))
    out[0] = 1.0
    if max_n >= 1:
        out[1] = xi
    for k in range(1, max_n):
        out[k + 1] = xi * out[k] - k * out[k - 1]
    return out


def _element_1d(n: int, mean: float, sigma: float) -> BayesElement:
    root = _sqrt_factorial(n)

    def phi(x):
        u = (np.asarray(x, dtype=float)[:, 0] - mean) / sigma
        return hermite_poly(n, u) / root

    def grad(x):
        u = (np.asarray(x, dtype=float)[:, 0] - mean) / sigma
        return (n * hermite_poly(n - 1, u) / (root * sigma))[:, None]

    def hess(x):
        u = (np.asarray(x, dtype=float)[:, 0] - mean) / sigma
        val = n * (n - 1) * hermite_poly(n - 2, u) / (root * sigma**2) if n >= 2 \
            else np.zeros(u.size)
        return val[:, None, None]

    return BayesElement(dim=1, phi=phi, grad=grad, hess=hess)


@dataclass(frozen=True)
class HermiteBasis1D:
    """First M exponentiated-Hermite functions, standardized by ``measure``."""

    order: int
    measure: GaussianMeasure
    elements: List[BayesElement] = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("basis needs at least one function")
        if self.measure.dim != 1:
            raise ValueError("HermiteBasis1D requires a one-dimensional measure")
        mean = float(self.measure.mean[0])
        sigma = float(np.sqrt(self.measure.covariance[0, 0]))
        elems = [_element_1d(n, mean, sigma) for n in range(1, self.order + 1)]
        object.__setattr__(self, "elements", elems)

    def __len__(self) -> int:
        return self.order


def basis_element(n: int, basis: HermiteBasis1D) -> BayesElement:
    """The n-th basis function (1-based, matching polynomial degree)."""
    if not 1 <= n <= basis.order:
        raise ValueError(f"order {n} outside basis range 1..{basis.order}")
    return basis.elements[n - 1]


def coordinates(p: BayesElement, basis: HermiteBasis1D, spec: QuadratureSpec) -> np.ndarray:
    """Fourier coefficients alpha_n = <h_n, p> under the basis measure.

    The basis is orthonormal so no Gram solve is needed; this is the
    derivative-free route.
    """
    if p.dim != 1:
        raise ValueError("Hermite coordinates are one-dimensional here")
    points, w = measure_nodes(basis.measure, spec)
    u = (points[:, 0] - basis.measure.mean[0]) / np.sqrt(basis.measure.covariance[0, 0])
    design = hermite_design(basis.order, u)[1:]
    roots = np.array([_sqrt_factorial(n) for n in range(1, basis.order + 1)])
    phi = np.asarray(p.phi(points), dtype=float)
    # centering phi makes the covariance exact under the discrete rule even
    # if the quadrature means of H_n are not identically zero
    phi = phi - w @ phi
    return (design @ (w * phi)) / roots


def coordinates_via_derivatives(p: BayesElement, basis: HermiteBasis1D,
                                spec: QuadratureSpec) -> np.ndarray:
    """Cross-check route: alpha_n = sigma^n/sqrt(n!) E[d^n phi / dx^n].

    Orders three and four difference the (analytic or fallback) Hessian;
    higher orders are not supported.
    """
    if basis.order > 4:
        raise ValueError("derivative route supported for orders up to 4")
    points, w = measure_nodes(basis.measure, spec)
    sigma = float(np.sqrt(basis.measure.covariance[0, 0]))
    out = np.empty(basis.order)
    g = element_grad(p, points)[:, 0]
    out[0] = sigma * (w @ g)
    if basis.order >= 2:
        h = element_hess(p, points)[:, 0, 0]
        out[1] = sigma**2 / _sqrt_factorial(2) * (w @ h)
    if basis.order >= 3:
        step = np.finfo(float).eps ** (1.0 / 3.0) * np.maximum(1.0, np.abs(points))
        d3 = (element_hess(p, points + step)[:, 0, 0]
              - element_hess(p, points - step)[:, 0, 0]) / (2 * step[:, 0])
        out[2] = sigma**3 / _sqrt_factorial(3) * (w @ d3)
    if basis.order >= 4:
        step = np.finfo(float).eps ** 0.25 * np.maximum(1.0, np.abs(points))
        h0 = element_hess(p, points)[:, 0, 0]
        d4 = (element_hess(p, points + step)[:, 0, 0] - 2 * h0
              + element_hess(p, points - step)[:, 0, 0]) / step[:, 0]**2
        out[3] = sigma**4 / _sqrt_factorial(4) * (w @ d4)
    return out


def reconstruct(alpha: Sequence[float], basis: HermiteBasis1D) -> BayesElement:
    """The element with the given coordinates: phi = sum alpha_n H_n(u)/sqrt(n!)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size != basis.order:
        raise ValueError(f"{alpha.size} coordinates for an order-{basis.order} basis")
    mean = float(basis.measure.mean[0])
    sigma = float(np.sqrt(basis.measure.covariance[0, 0]))
    roots = np.array([_sqrt_factorial(n) for n in range(1, basis.order + 1)])
    coeff = alpha / roots
    orders = np.arange(1, basis.order + 1)

    def phi(x):
        u = (np.asarray(x, dtype=float)[:, 0] - mean) / sigma
        return coeff @ hermite_design(basis.order, u)[1:]

    def grad(x):
        u = (np.asarray(x, dtype=float)[:, 0] - mean) / sigma
        design = hermite_design(basis.order, u)
        val = (coeff * orders) @ design[:-1] / sigma
        return val[:, None]

    def hess(x):
        u = (np.asarray(x, dtype=float)[:, 0] - mean) / sigma
        if basis.order < 2:
            return np.zeros((u.size, 1, 1))
        design = hermite_design(basis.order - 2, u)
        c2 = coeff[1:] * orders[1:] * (orders[1:] - 1)
        val = c2 @ design / sigma**2
        return val[:, None, None]

    return BayesElement(dim=1, phi=phi, grad=grad, hess=hess)


def _element_nd(orders: Sequence[int], measure: GaussianMeasure) -> BayesElement:
    orders = tuple(orders)
    root = math.prod(_sqrt_factorial(n) for n in orders)
    mean = measure.mean
    chol = measure.cholesky

    def phi(x):
        d = np.asarray(x, dtype=float) - mean
        xi = np.linalg.solve(chol, d.T).T
        out = np.ones(xi.shape[0])
        for k, n in enumerate(orders):
            if n:
                out = out * hermite_poly(n, xi[:, k])
        return out / root

    return BayesElement(dim=measure.dim, phi=phi)


@dataclass(frozen=True)
class HermiteBasisND:
    """Tensor Hermite basis on R^N, Kronecker-ordered, all-H_0 term removed."""

    order: int
    measure: GaussianMeasure
    index_sets: List[tuple] = field(init=False, repr=False)
    elements: List[BayesElement] = field(init=False, repr=False)

    def __post_init__(self):
        n = self.measure.dim
        if not (1 <= self.order <= _MAX_ND_ORDER and n <= _MAX_ND_DIM):
            raise ValueError(
                f"multivariate basis capped at order {_MAX_ND_ORDER}, dim {_MAX_ND_DIM}")
        combos = [c for c in product(range(self.order + 1), repeat=n) if any(c)]
        object.__setattr__(self, "index_sets", combos)
        object.__setattr__(self, "elements",
                           [_element_nd(c, self.measure) for c in combos])

    def __len__(self) -> int:
        return len(self.elements)


def multivariate_basis(order: int, dim: int, measure: Optional[GaussianMeasure] = None,
                       ) -> HermiteBasisND:
    """(order+1)^dim - 1 orthonormal functions under the given Gaussian measure."""
    if measure is None:
        measure = GaussianMeasure(np.zeros(dim), np.eye(dim))
    if measure.dim != dim:
        raise ValueError(f"measure dimension {measure.dim} != requested {dim}")
    return HermiteBasisND(order=order, measure=measure)
