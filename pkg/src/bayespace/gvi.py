"""Gaussian variational inference on factor graphs.

The joint negative-log target splits over factors with small variable
support, so every expectation the Gaussian update needs reduces to the
factor's own marginal: per-factor low-dimensional quadrature, scatter-add
assembly, and marginal-covariance extraction that touches only the blocks
present in the information matrix's fill pattern.  The dense route (full
inversion, dense solve) computes the exact same iterates and serves as the
oracle for the sparse machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .elements import BayesElement, element_grad, element_hess
from .errors import EvaluationFailure, NonSPD
from .gaussian import IndefGaussian
from .measures import GaussianMeasure, cholesky_or_raise
from .quadrature import QuadratureSpec, gh_spec, tensor_rule
from .variational import IterationTrace

_MAX_FACTOR_DIM = 4


@dataclass(frozen=True)
class Factor:
    """One additive term of the joint phi, over the variables in ``indices``.

    ``phi`` maps local states (m, k) -> (m,); ``grad``/``hess`` are the
    matching local derivatives (finite differences substitute when absent).
    ``kind``/``params`` carry the serialization identity.
    """

    indices: Tuple[int, ...]
    phi: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kind: str = "custom"
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"factor indices must be strictly increasing, got {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def arity(self) -> int:
        return len(self.indices)

    def as_element(self) -> BayesElement:
        return BayesElement(dim=self.arity, phi=self.phi, grad=self.grad, hess=self.hess)


@dataclass(frozen=True)
class FactorGraph:
    num_vars: int
    factors: Tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        covered = np.zeros(self.num_vars, dtype=bool)
        for f in self.factors:
            for i in f.indices:
                if not 0 <= i < self.num_vars:
                    raise ValueError(f"factor index {i} outside 0..{self.num_vars - 1}")
                covered[i] = True
        if not covered.all():
            missing = np.flatnonzero(~covered)
            raise ValueError(f"variables {missing.tolist()} appear in no factor; "
                             "the information matrix would be singular")

    def joint_element(self) -> BayesElement:
        """The full-dimensional sum of the factors (dense-route oracle)."""
        n, factors = self.num_vars, self.factors

        def phi(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[0])
            for f in factors:
                out = out + f.phi(x[:, f.indices])
            return out

        def grad(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for f in factors:
                out[:, f.indices] += _local_grad(f, x[:, f.indices])
            return out

        def hess(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros((x.shape[0], n, n))
            for f in factors:
                hk = _local_hess(f, x[:, f.indices])
                out[np.ix_(np.arange(x.shape[0]), f.indices, f.indices)] += hk
            return out

        return BayesElement(dim=n, phi=phi, grad=grad, hess=hess)


def _local_grad(f: Factor, x_local: np.ndarray) -> np.ndarray:
    if f.grad is not None:
        return np.asarray(f.grad(x_local), dtype=float)
    return element_grad(f.as_element(), x_local)


def _local_hess(f: Factor, x_local: np.ndarray) -> np.ndarray:
    if f.hess is not None:
        return np.asarray(f.hess(x_local), dtype=float)
    return element_hess(f.as_element(), x_local)


def fill_pattern(graph: FactorGraph) -> np.ndarray:
    """Symbolic fill of the information matrix: union of factor index pairs."""
    mask = np.zeros((graph.num_vars, graph.num_vars), dtype=bool)
    np.fill_diagonal(mask, True)
    for f in graph.factors:
        mask[np.ix_(f.indices, f.indices)] = True
    return mask


@dataclass(frozen=True)
class GaussianState:
    """Joint Gaussian estimate in information form with a fixed fill pattern."""

    mean: np.ndarray
    info: np.ndarray
    pattern: np.ndarray = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        info = np.atleast_2d(np.asarray(self.info, dtype=float))
        if info.shape != (mean.size, mean.size):
            raise ValueError(f"mean {mean.shape} and info {info.shape} disagree")
        info = 0.5 * (info + info.T)
        cholesky_or_raise(info, "information matrix")
        pattern = self.pattern
        if pattern is None:
            pattern = np.ones_like(info, dtype=bool)
        else:
            pattern = np.asarray(pattern, dtype=bool)
            if (np.abs(info[~pattern]) > 0).any():
                raise ValueError("info has entries outside the declared fill pattern")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "info", info)
        object.__setattr__(self, "pattern", pattern)

    @property
    def dim(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        low = np.linalg.cholesky(self.info)
        inv_low = np.linalg.solve(low, np.eye(self.dim))
        return inv_low.T @ inv_low

    def to_measure(self) -> GaussianMeasure:
        return GaussianMeasure(self.mean, self.covariance())


# ---------------------------------------------------------------------------
# Per-factor expectations and assembly
# ---------------------------------------------------------------------------

def _chol_small(cov: np.ndarray) -> np.ndarray:
    """Cholesky with fast paths for the 1x1/2x2 blocks factor marginals use."""
    k = cov.shape[0]
    if k == 1:
        if cov[0, 0] <= 0:
            raise NonSPD("marginal covariance is not positive", minor=1)
        return np.sqrt(cov)
    if k == 2:
        a = cov[0, 0]
        if a <= 0:
            raise NonSPD("marginal covariance is not positive", minor=1)
        ra = np.sqrt(a)
        b = cov[1, 0] / ra
        c2 = cov[1, 1] - b * b
        if c2 <= 0:
            raise NonSPD("marginal covariance is not positive", minor=2)
        return np.array([[ra, 0.0], [b, np.sqrt(c2)]])
    return cholesky_or_raise(cov, "marginal covariance")


def factor_expectations(factor: Factor, marginal: Tuple[np.ndarray, np.ndarray],
                        spec: QuadratureSpec,
                        with_value: bool = False):
    """E[d phi_k] and E[d^2 phi_k] under the factor's Gaussian marginal.

    Only ``arity``-dimensional quadrature is ever used.  With ``with_value``
    the expectation of phi_k itself is returned as a third output.
    """
    mean_k, cov_k = marginal
    k = factor.arity
    if k > _MAX_FACTOR_DIM:
        raise ValueError(f"factor support {k} exceeds the quadrature cap {_MAX_FACTOR_DIM}")
    xi, w = tensor_rule(spec.nodes_per_dim, k)
    x = np.asarray(mean_k, dtype=float) + xi @ _chol_small(np.atleast_2d(cov_k)).T
    gv = _local_grad(factor, x)
    hv = _local_hess(factor, x)
    if not (np.isfinite(gv).all() and np.isfinite(hv).all()):
        raise EvaluationFailure(f"factor {factor.kind}{factor.indices} derivative "
                                "not finite at a quadrature node")
    g = w @ gv
    h = np.einsum("i,ijk->jk", w, hv)
    h = 0.5 * (h + h.T)
    if with_value:
        return g, h, float(w @ np.asarray(factor.phi(x), dtype=float))
    return g, h


def assemble(graph: FactorGraph, expectations: Sequence[Tuple[np.ndarray, np.ndarray]],
             ) -> Tuple[np.ndarray, np.ndarray]:
    """Scatter per-factor (g_k, H_k) into the joint gradient and information."""
    n = graph.num_vars
    g = np.zeros(n)
    h = np.zeros((n, n))
    for f, (gk, hk) in zip(graph.factors, expectations):
        idx = np.asarray(f.indices)
        if idx.max(initial=-1) >= n:
            raise ValueError("factor index out of range")
        g[idx] += gk
        h[np.ix_(idx, idx)] += hk
    return g, h


# ---------------------------------------------------------------------------
# Marginal extraction
# ---------------------------------------------------------------------------

def _is_tridiagonal(pattern: np.ndarray) -> bool:
    n = pattern.shape[0]
    off = ~(np.tri(n, k=1, dtype=bool) & np.tri(n, k=1, dtype=bool).T)
    return not pattern[off].any()


def _tridiag_factorize(diag: np.ndarray, off: np.ndarray):
    """LDL^T factors of a symmetric tridiagonal matrix (raises NonSPD)."""
    n = diag.size
    delta = np.empty(n)
    c = np.empty(max(n - 1, 0))
    delta[0] = diag[0]
    if delta[0] <= 0:
        raise NonSPD("tridiagonal information not positive-definite", minor=1)
    for i in range(n - 1):
        c[i] = off[i] / delta[i]
        delta[i + 1] = diag[i + 1] - c[i] * off[i]
        if delta[i + 1] <= 0:
            raise NonSPD("tridiagonal information not positive-definite", minor=i + 2)
    return delta, c


def _tridiag_solve(delta: np.ndarray, c: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = b.size
    y = np.empty(n)
    y[0] = b[0]
    for i in range(1, n):
        y[i] = b[i] - c[i - 1] * y[i - 1]
    x = y / delta
    for i in range(n - 2, -1, -1):
        x[i] -= c[i] * x[i + 1]
    return x


def _tridiag_selected_inverse(delta: np.ndarray, c: np.ndarray):
    """Diagonal and first off-diagonal of the inverse via the two-sweep recursion."""
    n = delta.size
    s_diag = np.empty(n)
    s_off = np.empty(max(n - 1, 0))
    s_diag[-1] = 1.0 / delta[-1]
    for i in range(n - 2, -1, -1):
        s_off[i] = -c[i] * s_diag[i + 1]
        s_diag[i] = 1.0 / delta[i] - c[i] * s_off[i]
    return s_diag, s_off


def marginals_for_factors(state: GaussianState, graph: FactorGraph,
                          sparse: bool = True) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Mean and covariance block of each factor's variables.

    Chain-structured (tridiagonal) problems use the two-sweep selected
    inverse, touching only fill-pattern blocks; anything else falls back to
    full inversion, which is fine at desk scale.
    """
    if sparse and _is_tridiagonal(state.pattern):
        diag = np.diag(state.info).copy()
        off = np.diag(state.info, 1).copy()
        delta, c = _tridiag_factorize(diag, off)
        s_diag, s_off = _tridiag_selected_inverse(delta, c)
        out = []
        for f in graph.factors:
            idx = f.indices
            if len(idx) == 1:
                cov = np.array([[s_diag[idx[0]]]])
            else:
                i, j = idx
                if j != i + 1:
                    raise ValueError("non-adjacent factor on a tridiagonal pattern")
                cov = np.array([[s_diag[i], s_off[i]], [s_off[i], s_diag[j]]])
            out.append((state.mean[list(idx)], cov))
        return out
    sigma = state.covariance()
    return [(state.mean[list(f.indices)], sigma[np.ix_(f.indices, f.indices)])
            for f in graph.factors]


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GviOptions:
    tol: float = 1e-8
    max_iters: int = 50
    quad: QuadratureSpec = field(default_factory=lambda: gh_spec(10))
    damping: float = 1.0
    record_loss: bool = True

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


def _entropy(info: np.ndarray) -> float:
    low = np.linalg.cholesky(info)
    n = info.shape[0]
    return 0.5 * n * (1.0 + np.log(2.0 * np.pi)) - np.sum(np.log(np.diag(low)))


def _gvi_loop(graph: FactorGraph, init: GaussianState, opts: GviOptions,
              sparse: bool) -> IterationTrace:
    trace = IterationTrace()
    if opts.damping < 1.0:
        trace.notes.append(f"damping={opts.damping}")
    pattern = fill_pattern(graph)
    if (np.abs(init.info[~pattern]) > 0).any():
        raise ValueError("initial information has entries outside the graph fill")
    state = GaussianState(init.mean, init.info, pattern)
    tridiag = _is_tridiagonal(pattern)

    for _ in range(opts.max_iters):
        marginals = marginals_for_factors(state, graph, sparse=sparse)
        loss = 0.0
        expectations = []
        for f, marg in zip(graph.factors, marginals):
            if opts.record_loss:
                gk, hk, vk = factor_expectations(f, marg, opts.quad, with_value=True)
                loss += vk
            else:
                gk, hk = factor_expectations(f, marg, opts.quad)
            expectations.append((gk, hk))
        g, h = assemble(graph, expectations)
        if sparse:
            h = np.where(pattern, h, 0.0)  # enforce the symbolic fill
        try:
            if sparse and tridiag:
                delta, c = _tridiag_factorize(np.diag(h).copy(), np.diag(h, 1).copy())
                dmu = _tridiag_solve(delta, c, -g)
            else:
                low = cholesky_or_raise(h, "information matrix")
                dmu = np.linalg.solve(low.T, np.linalg.solve(low, -g))
            if opts.record_loss:
                trace.kl.append(loss - _entropy(state.info))
            mean = state.mean + opts.damping * dmu
            state = GaussianState(mean, h, pattern)
        except NonSPD as err:
            trace.aborted = str(err)
            err.trace = trace
            raise
        trace.coordinates.append(mean.copy())
        trace.measures.append(state.to_measure())
        trace.gaussians.append(IndefGaussian(mean_like=mean.copy(), info=h.copy(), spd=True))
        trace.step_norm.append(float(np.linalg.norm(opts.damping * dmu)))
        trace.iterations += 1
        if trace.step_norm[-1] < opts.tol:
            trace.converged = True
            break
    return trace


def gvi_sparse_solve(graph: FactorGraph, init: GaussianState,
                     opts: Optional[GviOptions] = None) -> IterationTrace:
    """Factor-decomposed Gaussian iterative projection (exactly sparse route)."""
    return _gvi_loop(graph, init, opts or GviOptions(), sparse=True)


def gvi_dense_solve(graph: FactorGraph, init: GaussianState,
                    opts: Optional[GviOptions] = None) -> IterationTrace:
    """Same iteration with dense marginals and solve; oracle for the sparse route."""
    return _gvi_loop(graph, init, opts or GviOptions(), sparse=False)


def gvi_step_dense(p: BayesElement, state: GaussianState,
                   spec: QuadratureSpec) -> GaussianState:
    """One Gaussian update from full-dimensional expectations of the joint phi.

    info+ = E_q[d^2 phi], info+ (mean+ - mean) = -E_q[d phi].
    """
    from .gaussian import expected_derivatives

    measure = state.to_measure()
    g, h = expected_derivatives(p, measure, spec)
    low = cholesky_or_raise(h, "updated information")
    dmu = np.linalg.solve(low.T, np.linalg.solve(low, -g))
    return GaussianState(state.mean + dmu, h, np.ones_like(h, dtype=bool))


# ---------------------------------------------------------------------------
# Factor builders
# ---------------------------------------------------------------------------

def prior_factor(i: int, mean: float, var: float) -> Factor:
    """0.5 (x_i - mean)^2 / var."""
    mean, var = float(mean), float(var)

    def phi(x):
        return 0.5 * (x[:, 0] - mean) ** 2 / var

    return Factor(
        indices=(i,), phi=phi,
        grad=lambda x: (x - mean) / var,
        hess=lambda x: np.full((x.shape[0], 1, 1), 1.0 / var),
        kind="prior", params=(mean, var))


def odom_factor(i: int, j: int, u: float, var: float) -> Factor:
    """0.5 (x_j - x_i - u)^2 / var for consecutive poses."""
    u, var = float(u), float(var)
    jac = np.array([-1.0, 1.0])
    h_const = np.outer(jac, jac) / var

    def phi(x):
        return 0.5 * (x[:, 1] - x[:, 0] - u) ** 2 / var

    def grad(x):
        e = (x[:, 1] - x[:, 0] - u) / var
        return e[:, None] * jac

    def hess(x):
        return np.broadcast_to(h_const, (x.shape[0], 2, 2)).copy()

    return Factor(indices=(i, j), phi=phi, grad=grad, hess=hess,
                  kind="odom", params=(u, var))


def range_factor(i: int, j: int, z: float, var: float, offset: float) -> Factor:
    """0.5 (z - sqrt((x_j - x_i)^2 + offset^2))^2 / var.

    A range-to-beacon measurement with a fixed sensor offset; the offset
    keeps the model smooth and genuinely nonlinear at short range.
    """
    z, var, offset = float(z), float(var), float(offset)
    jac = np.array([-1.0, 1.0])
    outer = np.outer(jac, jac)

    def parts(x):
        d = x[:, 1] - x[:, 0]
        r = np.sqrt(d * d + offset * offset)
        return d, r, z - r

    def phi(x):
        _, _, e = parts(x)
        return 0.5 * e * e / var

    def grad(x):
        d, r, e = parts(x)
        dphi_dd = -e * (d / r) / var
        return dphi_dd[:, None] * jac

    def hess(x):
        d, r, e = parts(x)
        d2 = ((d / r) ** 2 - e * (offset * offset) / r**3) / var
        return d2[:, None, None] * outer

    return Factor(indices=(i, j), phi=phi, grad=grad, hess=hess,
                  kind="range", params=(z, var, offset))


def stereo_factor(i: int, z: float, f: float, b: float, var: float) -> Factor:
    """0.5 (z - f b / x_i)^2 / var, the inverse-distance camera model."""
    z, f, b, var = float(z), float(f), float(b), float(var)
    fb = f * b

    def phi(x):
        return 0.5 * (z - fb / x[:, 0]) ** 2 / var

    def grad(x):
        xv = x[:, 0]
        return ((z - fb / xv) * (fb / xv**2) / var)[:, None]

    def hess(x):
        xv = x[:, 0]
        val = ((fb / xv**2) ** 2 + (z - fb / xv) * (-2.0 * fb / xv**3)) / var
        return val[:, None, None]

    return Factor(indices=(i,), phi=phi, grad=grad, hess=hess,
                  kind="stereo", params=(z, f, b, var))
