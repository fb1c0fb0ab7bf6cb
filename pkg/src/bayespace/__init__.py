"""Bayesian Hilbert space numerics: element algebra, orthonormal bases,
KL-projection machinery, and sparse Gaussian variational inference."""

from .elements import (BayesElement, add, constant_element, divergence, equivalent,
                       gaussian_element, information, inner_product, normalize,
                       scale, stochastic_derivative, subtract)
from .errors import (BayesSpaceError, ConfigError, DimensionMismatch,
                     EvaluationFailure, MeasureInvalid, NonSPD, NotNormalizable,
                     SingularGram, SingularInformation)
from .gaussian import (GaussianBasis, IndefGaussian, expected_derivatives,
                       gaussian_basis, gaussian_coordinates,
                       gaussian_coordinates_direct, gaussian_from_coordinates,
                       gaussian_information, project_to_gaussian)
from .gvi import (Factor, FactorGraph, GaussianState, GviOptions, assemble,
                  factor_expectations, gvi_dense_solve, gvi_sparse_solve,
                  gvi_step_dense, marginals_for_factors, odom_factor,
                  prior_factor, range_factor, stereo_factor)
from .hermite import (HermiteBasis1D, HermiteBasisND, basis_element, coordinates,
                      hermite_poly, multivariate_basis, reconstruct)
from .matrixops import DuplicationOps, build_duplication, vec, vech, unvech
from .measures import GaussianMeasure
from .quadrature import QuadratureSpec, expect, gauss_hermite_rule, gh_spec, grid_spec, stein_check
from .variational import (BasisSet, GaussianSubspace, HermiteSubspace,
                          IterateOptions, IterationTrace, fim, gram, iterate,
                          kernel_apply, kl, kl_gradient, kl_hessian,
                          measure_derivative_ip, project, reporting_grid)

__all__ = [name for name in dir() if not name.startswith("_")]
