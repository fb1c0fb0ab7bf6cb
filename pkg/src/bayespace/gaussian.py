"""The indefinite-Gaussian subspace: basis, coordinates, projection, information.

The subspace is spanned by N(N+3)/2 exponentiated functions of the
standardized state: the N linear ones and the N(N+1)/2 scaled quadratic
monomials, orthonormal under the Gaussian measure that standardizes them.
Members are exponentiated quadratics whose "covariance" may be
sign-indefinite; only the positive-definite ones are valid PDFs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .elements import BayesElement, element_grad, element_hess
from .errors import SingularInformation
from .matrixops import DuplicationOps, build_duplication, unvech, vec, vech, vech_indices
from .measures import GaussianMeasure, cholesky_or_raise
from .quadrature import QuadratureSpec, measure_nodes

_COND_LIMIT = 1e12


def _standardize(measure: GaussianMeasure, x: np.ndarray) -> np.ndarray:
    d = np.atleast_2d(np.asarray(x, dtype=float)) - measure.mean
    return np.linalg.solve(measure.cholesky, d.T).T


@dataclass(frozen=True)
class GaussianBasis:
    """Orthonormal basis for the indefinite-Gaussian subspace under ``measure``."""

    measure: GaussianMeasure
    ops: DuplicationOps = field(init=False, repr=False)
    elements: List[BayesElement] = field(init=False, repr=False)

    def __post_init__(self):
        n = self.measure.dim
        object.__setattr__(self, "ops", build_duplication(n))
        elems = []
        for i in range(n):
            elems.append(BayesElement(
                dim=n,
                phi=lambda x, i=i, m=self.measure: _standardize(m, x)[:, i]))
        rows, cols = vech_indices(n)
        w = self.ops.sqrt_half_dtd
        for k in range(n * (n + 1) // 2):
            def phi(x, k=k, m=self.measure, rows=rows, cols=cols, w=w):
                xi = _standardize(m, x)
                quad = xi[:, rows] * xi[:, cols]
                return quad @ w[k]
            elems.append(BayesElement(dim=n, phi=phi))
        object.__setattr__(self, "elements", elems)

    def __len__(self) -> int:
        n = self.measure.dim
        return n * (n + 3) // 2


def gaussian_basis(measure: GaussianMeasure) -> GaussianBasis:
    return GaussianBasis(measure=measure)


@dataclass(frozen=True)
class IndefGaussian:
    """Exponentiated quadratic in information form; ``spd`` marks a valid PDF."""

    mean_like: np.ndarray
    info: np.ndarray
    spd: bool

    @property
    def dim(self) -> int:
        return self.mean_like.size

    def covariance(self) -> np.ndarray:
        if not self.spd:
            raise SingularInformation("info is not positive-definite")
        return np.linalg.inv(self.info)

    def to_element(self) -> BayesElement:
        mean, info, dim = self.mean_like, self.info, self.dim

        def phi(x):
            d = np.asarray(x, dtype=float) - mean
            return 0.5 * np.einsum("...i,ij,...j->...", d, info, d)

        return BayesElement(
            dim=dim,
            phi=phi,
            grad=lambda x: (np.asarray(x, dtype=float) - mean) @ info,
            hess=lambda x: np.broadcast_to(info, (np.asarray(x).shape[0], dim, dim)).copy(),
        )

    def to_measure(self) -> GaussianMeasure:
        return GaussianMeasure(self.mean_like, self.covariance())


def _is_spd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


def expected_derivatives(p: BayesElement, measure: GaussianMeasure,
                         spec: QuadratureSpec) -> Tuple[np.ndarray, np.ndarray]:
    """E_nu[d phi/dx] and E_nu[d^2 phi/dx dx] under the Gaussian measure."""
    points, w = measure_nodes(measure, spec)
    g = w @ element_grad(p, points)
    h = np.einsum("i,ijk->jk", w, element_hess(p, points))
    return g, 0.5 * (h + h.T)


def gaussian_coordinates(p: BayesElement, measure: GaussianMeasure,
                         spec: QuadratureSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinates of p in the Gaussian basis, via expected derivatives.

    alpha_1 = L^T E[d phi], alpha_2 = sqrt(0.5 D^T D) vech(L^T E[d^2 phi] L);
    Stein's lemma makes these equal to the direct inner products <g, p>.
    """
    g, h = expected_derivatives(p, measure, spec)
    ops = build_duplication(measure.dim)
    chol = measure.cholesky
    alpha1 = chol.T @ g
    alpha2 = ops.sqrt_half_dtd @ vech(chol.T @ h @ chol)
    return alpha1, alpha2


def gaussian_coordinates_direct(p: BayesElement, measure: GaussianMeasure,
                                spec: QuadratureSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Same coordinates by explicit inner products against the basis functions."""
    from .elements import inner_product  # deferred to keep import graph flat

    basis = gaussian_basis(measure)
    n = measure.dim
    coords = np.array([inner_product(b, p, measure, spec) for b in basis.elements])
    return coords[:n], coords[n:]


def project_to_gaussian(p: BayesElement, measure: GaussianMeasure,
                        spec: QuadratureSpec) -> IndefGaussian:
    """Orthogonal projection of p onto the indefinite-Gaussian subspace.

    The projected information is E_nu[d^2 phi]; the mean-like point solves
    info (mu+ - mu) = -E_nu[d phi].  Raises :class:`SingularInformation`
    when the information is numerically singular.
    """
    g, h = expected_derivatives(p, measure, spec)
    if np.linalg.cond(h) > _COND_LIMIT:
        raise SingularInformation("projected information matrix is numerically singular")
    mean_like = measure.mean + np.linalg.solve(h, -g)
    return IndefGaussian(mean_like=mean_like, info=h, spd=_is_spd(h))


def gaussian_from_coordinates(alpha1: np.ndarray, alpha2: np.ndarray,
                              measure: GaussianMeasure) -> IndefGaussian:
    """Rebuild the subspace member with the given coordinates.

    With S the symmetric matrix encoded by alpha_2, the member has mean
    mu - L S^{-1} alpha_1 and covariance L S^{-1} L^T.
    """
    ops = build_duplication(measure.dim)
    s = unvech(np.linalg.solve(ops.sqrt_half_dtd, np.asarray(alpha2, dtype=float)))
    chol = measure.cholesky
    if np.linalg.cond(s) > _COND_LIMIT:
        raise SingularInformation("coordinate matrix S is numerically singular")
    linv = np.linalg.inv(chol)
    info = linv.T @ s @ linv
    info = 0.5 * (info + info.T)
    mean_like = measure.mean - chol @ np.linalg.solve(s, np.asarray(alpha1, dtype=float))
    return IndefGaussian(mean_like=mean_like, info=info, spd=_is_spd(info))


def gaussian_information(g: IndefGaussian, measure: GaussianMeasure,
                         route: str = "coordinates") -> float:
    """Information in a positive-definite Gaussian, conditioned on the measure.

    Three algebraically identical routes are exposed: "coordinates" (half
    the squared coordinate norm), "trace" (mean/trace quadratic forms), and
    "natural" (quadratic form in the natural parameters).
    """
    if not g.spd:
        raise SingularInformation("information requires a positive-definite Gaussian")
    cholesky_or_raise(measure.covariance, "measure covariance")
    mu, sigma = measure.mean, measure.covariance
    info_p = g.info           # Sigma'^{-1}
    dmu = mu - g.mean_like    # mu - mu'
    if route == "coordinates":
        chol = measure.cholesky
        ops = build_duplication(measure.dim)
        alpha1 = chol.T @ info_p @ dmu
        alpha2 = ops.sqrt_half_dtd @ (ops.d_dagger @ vec(chol.T @ info_p @ chol))
        return 0.5 * float(alpha1 @ alpha1 + alpha2 @ alpha2)
    if route == "trace":
        a = info_p @ sigma @ info_p
        return 0.5 * float(dmu @ a @ dmu + 0.5 * np.trace(a @ sigma))
    if route == "natural":
        n = measure.dim
        eye = np.eye(n)
        theta = np.concatenate([info_p @ g.mean_like, vec(info_p)])
        mu_kron = np.kron(mu[:, None], eye)          # (mu x 1): n^2 by n
        top = np.hstack([sigma, -sigma @ mu_kron.T])
        bottom = np.hstack([-mu_kron @ sigma,
                            0.5 * np.kron(sigma, sigma) + mu_kron @ sigma @ mu_kron.T])
        block = np.vstack([top, bottom])
        return 0.5 * float(theta @ block @ theta)
    raise ValueError(f"unknown route {route!r}")
