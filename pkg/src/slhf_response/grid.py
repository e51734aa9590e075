"""Generalized pseudospectral radial grid.

Legendre-Gauss-Lobatto collocation on x in [-1, 1], mapped to r in [0, r_max]
by the algebraic map

    r(x) = map_param * (1 + x) / (1 - x + 2 * map_param / r_max)

which clusters nodes near the nucleus and keeps a usable density of points in
the tail. Physical-space first/second derivative matrices come from the chain
rule with the analytic Jacobian; the variational stiffness form used by the
eigen- and Green-function solvers is D^T diag(w/J) D, which is symmetric under
the quadrature inner product.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_legendre, roots_jacobi

from .errors import ConfigurationError, ContractError


def lobatto_nodes_weights(n):
    """n+1 Legendre-Gauss-Lobatto nodes and weights on [-1, 1]."""
    if n < 2:
        raise ConfigurationError("point_count must be at least 2")
    inner, _ = roots_jacobi(n - 1, 1.0, 1.0)
    x = np.concatenate(([-1.0], inner, [1.0]))
    x = 0.5 * (x - x[::-1])          # enforce exact antisymmetry
    w = 2.0 / (n * (n + 1) * eval_legendre(n, x) ** 2)
    w = 0.5 * (w + w[::-1])
    return x, w


def lobatto_diff_matrix(x, n):
    """First-derivative collocation matrix on LGL nodes (negative-sum diagonal)."""
    P = eval_legendre(n, x)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (P[:, None] / P[None, :]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def _second_diff(D1, x):
    # Welfert's recursion; noticeably less roundoff than D1 @ D1 at large N.
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D2 = 2.0 * (np.diag(D1)[:, None] * D1 - D1 / dx)
    np.fill_diagonal(D2, 0.0)
    np.fill_diagonal(D2, -D2.sum(axis=1))
    return D2


@dataclass(frozen=True)
class RadialGrid:
    """Immutable radial discretization shared by every solver.

    nodes/weights cover all N+1 points including r=0 and r=r_max; weights are
    quadrature weights for integrals dr. d1/d2 are dense physical derivative
    matrices over all nodes (solvers restrict to interior rows/columns for
    Dirichlet boundary conditions).
    """

    point_count: int
    r_max: float
    map_param: float
    nodes: np.ndarray
    weights: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    x: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)
    stiffness: np.ndarray = field(repr=False)
    _cumulative: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.nodes, self.weights, self.d1, self.d2, self.x,
                    self.jacobian, self.stiffness, self._cumulative):
            arr.setflags(write=False)

    @property
    def interior(self):
        return self.nodes[1:-1]

    @property
    def interior_weights(self):
        return self.weights[1:-1]

    def key(self):
        return (self.point_count, float(self.r_max), float(self.map_param))

    def integrate_from_zero(self, samples):
        """Cumulative integral of the interpolant, int_0^{r_j} f dr at every node."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape != self.nodes.shape:
            raise ContractError("sample length does not match node count")
        return self._cumulative @ (samples * self.jacobian)


def build_grid(point_count, r_max, map_param):
    """Construct the mapped LGL grid; see module docstring for the map."""
    if point_count < 16:
        raise ConfigurationError("point_count must be >= 16")
    if not (0 < map_param < r_max):
        raise ConfigurationError("map_param must satisfy 0 < map_param < r_max")
    n = int(point_count)
    x, w = lobatto_nodes_weights(n)
    alpha = 2.0 * map_param / r_max
    r = map_param * (1 + x) / (1 - x + alpha)
    r[0] = 0.0
    r[-1] = float(r_max)
    J = map_param * (2 + alpha) / (1 - x + alpha) ** 2
    Jp = 2 * map_param * (2 + alpha) / (1 - x + alpha) ** 3
    Dx = lobatto_diff_matrix(x, n)
    Dx2 = _second_diff(Dx, x)
    d1 = Dx / J[:, None]
    d2 = Dx2 / (J ** 2)[:, None] - (Jp / J ** 3)[:, None] * Dx
    weights = w * J
    stiffness = Dx.T @ (np.diag(w / J) @ Dx)
    cumulative = _cumulative_matrix(x, w, n)
    return RadialGrid(point_count=n, r_max=float(r_max), map_param=float(map_param),
                      nodes=r, weights=weights, d1=d1, d2=d2, x=x, jacobian=J,
                      stiffness=stiffness, _cumulative=cumulative)


def _cumulative_matrix(x, w, n):
    # Exact antiderivative of the degree-n interpolant via the discrete
    # Legendre transform (LGL norms, modified for the top mode).
    orders = np.arange(n + 1)
    V = eval_legendre(orders[None, :], x[:, None])
    norms = 2.0 / (2 * orders + 1.0)
    norms[n] = 2.0 / n
    transform = (V * w[:, None]).T / norms[:, None]
    Vext = eval_legendre(np.arange(n + 2)[None, :], x[:, None])
    anti = np.zeros((n + 1, n + 1))
    anti[:, 0] = x + 1.0
    for k in range(1, n + 1):
        anti[:, k] = (Vext[:, k + 1] - Vext[:, k - 1]) / (2 * k + 1.0)
    return anti @ transform


def integrate(grid, samples):
    """Quadrature integral over [0, r_max] of node samples."""
    samples = np.asarray(samples)
    if samples.shape != grid.nodes.shape:
        raise ContractError(
            f"sample length {samples.shape} does not match node count {grid.nodes.shape}")
    return float(np.real_if_close(np.sum(grid.weights * samples)))


def slater_screening(grid, f, k):
    """Radial Slater screening function of order k for pair density samples f:

    y_k(r) = r^{-(k+1)} int_0^r f t^k dt  +  r^k int_r^inf f t^{-(k+1)} dt

    f is R_a(r) R_b(r) sampled on the nodes; the r=0 node is handled by its
    analytic limit (finite for k=0, zero otherwise).
    """
    r = grid.nodes
    inner = grid.integrate_from_zero(f * r ** k)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail_integrand = np.where(r > 0, f / r ** (k + 1), 0.0)
    outer = grid.integrate_from_zero(tail_integrand)
    y = np.zeros_like(f)
    y[1:] = inner[1:] / r[1:] ** (k + 1) + r[1:] ** k * (outer[-1] - outer[1:])
    y[0] = outer[-1] if k == 0 else 0.0
    return y
