"""
Finite-difference operators on a uniform grid over the unit square.

Fields are plain ``numpy`` arrays of shape ``(ny, nx)``; row ``j`` holds the
nodes with ``y = j * dy`` and column ``i`` the nodes with ``x = i * dx``.

Every transport operator is written in flux form on a vertex-centred control
volume (half cells on the boundary).  With zero flux through the boundary
faces this reproduces the ghost-node reflection stencil for the Laplacian and
makes all operators conservative with respect to the trapezoidal rule used by
:func:`integrate_domain`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on ``(0, 1) x (0, 1)``."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")

    @classmethod
    def square(cls, n: int = 21) -> "Grid":
        return cls(n, n)

    @property
    def dx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def dy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)``, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    def cell_widths(self) -> tuple[np.ndarray, np.ndarray]:
        """Control-volume widths along x and y (halved on the boundary), read-only."""
        return _cell_widths(self.nx, self.ny)

    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights, shape ``(ny, nx)``."""
        wx, wy = self.cell_widths()
        return np.outer(wy, wx)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))


@lru_cache(maxsize=32)
def _cell_widths(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    out = []
    for n in (nx, ny):
        w = np.full(n, 1.0 / (n - 1))
        w[[0, -1]] *= 0.5
        w.flags.writeable = False
        out.append(w)
    return tuple(out)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box inside the unit square."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.x_max, self.y_min, self.y_max):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"region coordinates must lie in [0, 1], got {self}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"region must have positive area, got {self}")

    def contains(self, X: np.ndarray, Y: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return (
            (X >= self.x_min - tol)
            & (X <= self.x_max + tol)
            & (Y >= self.y_min - tol)
            & (Y <= self.y_max + tol)
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


# Portal field in the lower right corner of the unit square.
DEFAULT_THETA = Region(0.8, 1.0, 0.0, 0.2)


@dataclass(frozen=True, eq=False)
class AnisotropyMap:
    """Symmetric 2x2 tensor field ``[[a11, a12], [a12, a22]]``.

    Entries may be scalars (constant tensor) or arrays broadcastable to the
    grid shape.
    """

    a11: np.ndarray | float = 1.0
    a12: np.ndarray | float = 0.0
    a22: np.ndarray | float = 1.0

    def __post_init__(self):
        a11 = np.asarray(self.a11, dtype=float)
        a12 = np.asarray(self.a12, dtype=float)
        a22 = np.asarray(self.a22, dtype=float)
        det = a11 * a22 - a12 * a12
        if not (np.all(a11 > 0) and np.all(det > 0)):
            raise ValueError("anisotropy tensor must be positive definite at every node")

    def __eq__(self, other):
        if not isinstance(other, AnisotropyMap):
            return NotImplemented
        return all(
            np.array_equal(np.asarray(getattr(self, k)), np.asarray(getattr(other, k)))
            for k in ("a11", "a12", "a22")
        )

    __hash__ = None

    @classmethod
    def identity(cls) -> "AnisotropyMap":
        return cls(1.0, 0.0, 1.0)

    def on(self, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        shape = grid.shape
        return tuple(np.broadcast_to(np.asarray(a, dtype=float), shape) for a in (self.a11, self.a12, self.a22))

    def min_eigenvalue(self, grid: Grid) -> float:
        a11, a12, a22 = self.on(grid)
        mean = 0.5 * (a11 + a22)
        rad = np.sqrt(0.25 * (a11 - a22) ** 2 + a12 ** 2)
        return float(np.min(mean - rad))

    def is_positive_definite(self, grid: Grid) -> bool:
        a11, a12, a22 = self.on(grid)
        return bool(np.all(a11 > 0) and np.all(a11 * a22 - a12 ** 2 > 0))

    @property
    def is_constant(self) -> bool:
        return all(np.ndim(a) == 0 for a in (self.a11, self.a12, self.a22))


def _check_field(f: np.ndarray, grid: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    return f


def _divergence(fx: np.ndarray, fy: np.ndarray, grid: Grid) -> np.ndarray:
    """Net outflow per unit area from face fluxes.

    ``fx`` lives on the ``nx - 1`` vertical faces of each row, ``fy`` on the
    ``ny - 1`` horizontal faces of each column.  Boundary faces carry no flux.
    """
    wx, wy = grid.cell_widths()
    net = np.zeros(grid.shape)
    net[:, :-1] += fx
    net[:, 1:] -= fx
    out = net / wx
    net = np.zeros(grid.shape)
    net[:-1, :] += fy
    net[1:, :] -= fy
    return out + net / wy[:, None]


def laplacian_neumann(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Five-point Laplacian with homogeneous Neumann conditions."""
    f = _check_field(f, grid)
    fx = (f[:, 1:] - f[:, :-1]) / grid.dx
    fy = (f[1:, :] - f[:-1, :]) / grid.dy
    return _divergence(fx, fy, grid)


def _nodal_gradient(f: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    # Central differences; the reflected ghost node makes boundary values vanish.
    gx = np.zeros(grid.shape)
    gy = np.zeros(grid.shape)
    gx[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * grid.dx)
    gy[1:-1, :] = (f[2:, :] - f[:-2, :]) / (2 * grid.dy)
    return gx, gy


def aniso_diffusion(f: np.ndarray, A: AnisotropyMap, d: float, grid: Grid) -> np.ndarray:
    """``div(d A(x) grad f)`` with face-averaged tensor entries and zero normal flux."""
    f = _check_field(f, grid)
    if d < 0:
        raise ValueError("diffusion coefficient must be non-negative")
    if not A.is_positive_definite(grid):
        raise ValueError("anisotropy tensor must be positive definite at every node")
    if d == 0:
        return grid.zeros()
    a11, a12, a22 = A.on(grid)
    a11_x = 0.5 * (a11[:, 1:] + a11[:, :-1])
    a22_y = 0.5 * (a22[1:, :] + a22[:-1, :])
    fx = a11_x * (f[:, 1:] - f[:, :-1]) / grid.dx
    fy = a22_y * (f[1:, :] - f[:-1, :]) / grid.dy
    if np.any(a12 != 0):
        gx, gy = _nodal_gradient(f, grid)
        fx = fx + 0.5 * (a12[:, 1:] + a12[:, :-1]) * 0.5 * (gy[:, 1:] + gy[:, :-1])
        fy = fy + 0.5 * (a12[1:, :] + a12[:-1, :]) * 0.5 * (gx[1:, :] + gx[:-1, :])
    return d * _divergence(fx, fy, grid)


def chemotaxis_div(carrier: np.ndarray, attractant: np.ndarray, d_chem: float, grid: Grid) -> np.ndarray:
    """Attractive chemotaxis ``-div(d_chem * carrier * grad attractant)``.

    The carrier is taken from the upwind side of each face, i.e. from the node
    the cells leave, so a non-negative carrier can never be driven negative by
    more than the local outflow.
    """
    if d_chem < 0:
        raise ValueError("chemotactic sensitivity must be non-negative")
    c = _check_field(carrier, grid)
    a = _check_field(attractant, grid)
    ga = (a[:, 1:] - a[:, :-1]) / grid.dx
    fx = d_chem * np.where(ga > 0, c[:, :-1], c[:, 1:]) * ga
    ga = (a[1:, :] - a[:-1, :]) / grid.dy
    fy = d_chem * np.where(ga > 0, c[:-1, :], c[1:, :]) * ga
    return -_divergence(fx, fy, grid)


def integrate_domain(f: np.ndarray, grid: Grid) -> float:
    """Trapezoidal rule over the unit square."""
    f = _check_field(f, grid)
    return float(np.sum(grid.weights() * f))


def chi_theta(grid: Grid, theta: Region = DEFAULT_THETA) -> np.ndarray:
    """Indicator of ``theta`` on the nodes, scaled to unit integral."""
    X, Y = grid.mesh()
    chi = theta.contains(X, Y).astype(float)
    mass = integrate_domain(chi, grid)
    if mass <= 0:
        raise ValueError(f"region {theta} contains no grid nodes")
    return chi / mass


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of :func:`laplacian_neumann` acting on raveled fields."""

    def axis(n, h):
        main = np.full(n, -2.0)
        upper = np.ones(n - 1)
        lower = np.ones(n - 1)
        upper[0] = 2.0
        lower[-1] = 2.0
        return sp.diags([lower, main, upper], [-1, 0, 1]) / h ** 2

    Lx = axis(grid.nx, grid.dx)
    Ly = axis(grid.ny, grid.dy)
    return (sp.kron(sp.identity(grid.ny), Lx) + sp.kron(Ly, sp.identity(grid.nx))).tocsr()


def neumann_eigenvalue(n: int, k: int = 1) -> float:
    """``k``-th eigenvalue magnitude of the 1D Neumann difference Laplacian on ``n`` nodes."""
    h = 1.0 / (n - 1)
    return 4.0 / h ** 2 * np.sin(np.pi * k * h / 2) ** 2
