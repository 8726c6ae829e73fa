"""Uniform rectangular grid and the scalar / flux function spaces on it.

Scalar unknowns live on the interior nodes of the rectangle and are extended
by zero to the boundary (homogeneous Dirichlet), so boundary values are never
stored.  Flux-type quantities carry four components, one per one-sided
difference direction (forward/backward along x1 and x2); each component has
its own half-grid index range, but every value sits on an integer grid node.
All inner products use the uniform weight h1*h2, including the range-boundary
indices of the half-grids, which is what makes the discrete gradient and
divergence exact adjoints of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid2D",
    "ScalarField",
    "FluxField",
    "CoeffField",
    "FLUX_COMPONENTS",
    "build_grid",
    "scalar_inner_product",
    "scalar_norm",
    "flux_inner_product",
    "flux_norm",
    "operator_weighted_norm",
]

# Canonical component order: forward/backward along x1, then along x2.
FLUX_COMPONENTS = ("q1p", "q1m", "q2p", "q2m")


@dataclass(frozen=True)
class Grid2D:
    """Uniform grid on the rectangle (0, l1) x (0, l2) with n1 x n2 cells.

    Node (i1, i2) sits at (i1*h1, i2*h2) for i_alpha = 0..n_alpha.  The
    interior node set has (n1-1)*(n2-1) nodes.  Half-grid index ranges:

        q1p: i1 = 0..n1-1, i2 = 1..n2-1      q1m: i1 = 1..n1, i2 = 1..n2-1
        q2p: i1 = 1..n1-1, i2 = 0..n2-1      q2m: i1 = 1..n1-1, i2 = 1..n2
    """

    l1: float
    l2: float
    n1: int
    n2: int

    def __post_init__(self):
        if not (self.l1 > 0 and self.l2 > 0):
            raise ValueError(f"side lengths must be positive, got ({self.l1}, {self.l2})")
        for n in (self.n1, self.n2):
            if int(n) != n or n < 2:
                raise ValueError(f"cell counts must be integers >= 2, got ({self.n1}, {self.n2})")

    @property
    def h1(self) -> float:
        return self.l1 / self.n1

    @property
    def h2(self) -> float:
        return self.l2 / self.n2

    @property
    def cell_area(self) -> float:
        return self.h1 * self.h2

    # -- shapes ---------------------------------------------------------
    @property
    def shape_interior(self) -> tuple[int, int]:
        return (self.n1 - 1, self.n2 - 1)

    @property
    def shape_q1(self) -> tuple[int, int]:
        """Shape of the q1p/q1m component arrays (row index along x1)."""
        return (self.n1, self.n2 - 1)

    @property
    def shape_q2(self) -> tuple[int, int]:
        return (self.n1 - 1, self.n2)

    @property
    def num_interior(self) -> int:
        return (self.n1 - 1) * (self.n2 - 1)

    @property
    def num_flux(self) -> int:
        return 2 * self.n1 * (self.n2 - 1) + 2 * (self.n1 - 1) * self.n2

    # -- coordinates -----------------------------------------------------
    @property
    def x1_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.l1, self.n1 + 1)

    @property
    def x2_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.l2, self.n2 + 1)

    def interior_meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """(X1, X2) coordinate arrays over interior nodes, shape (n1-1, n2-1)."""
        return np.meshgrid(self.x1_nodes[1:-1], self.x2_nodes[1:-1], indexing="ij")

    def node_meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """(X1, X2) over all nodes including the boundary, shape (n1+1, n2+1)."""
        return np.meshgrid(self.x1_nodes, self.x2_nodes, indexing="ij")

    def halfgrid_meshgrid(self, component: str) -> tuple[np.ndarray, np.ndarray]:
        """(X1, X2) coordinate arrays for one flux component's index range."""
        x1, x2 = self.x1_nodes, self.x2_nodes
        if component == "q1p":
            return np.meshgrid(x1[:-1], x2[1:-1], indexing="ij")
        if component == "q1m":
            return np.meshgrid(x1[1:], x2[1:-1], indexing="ij")
        if component == "q2p":
            return np.meshgrid(x1[1:-1], x2[:-1], indexing="ij")
        if component == "q2m":
            return np.meshgrid(x1[1:-1], x2[1:], indexing="ij")
        raise ValueError(f"unknown flux component {component!r}")


def build_grid(l1: float, l2: float, n1: int, n2: int) -> Grid2D:
    """Build a uniform rectangular grid; rejects n_alpha < 2 (no interior nodes)."""
    return Grid2D(float(l1), float(l2), int(n1), int(n2))


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


@dataclass
class ScalarField:
    """Grid function on the interior nodes, implicitly zero on the boundary.

    values[i1-1, i2-1] is the value at node (i1, i2), i_alpha = 1..n_alpha-1.
    """

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape_interior:
            raise ValueError(
                f"scalar field shape {self.values.shape} != interior shape {self.grid.shape_interior}"
            )

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape_interior))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        """Sample fn(X1, X2) on the interior nodes (fn must broadcast over arrays)."""
        x1, x2 = grid.interior_meshgrid()
        return cls(grid, np.asarray(fn(x1, x2), dtype=float))

    def padded(self) -> np.ndarray:
        """Values on all nodes, shape (n1+1, n2+1), zero on the boundary."""
        out = np.zeros((self.grid.n1 + 1, self.grid.n2 + 1))
        out[1:-1, 1:-1] = self.values
        return out

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    # Linear-space arithmetic used by the time steppers.
    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * a)

    __rmul__ = __mul__


@dataclass
class FluxField:
    """Four-component grid vector (q1p, q1m, q2p, q2m) on the half-grids.

    q1p[i1, i2-1], q1m[i1-1, i2-1] hold the forward/backward x1 components;
    q2p[i1-1, i2], q2m[i1-1, i2-1] the x2 components, each over its own
    half-grid index range (see Grid2D).
    """

    grid: Grid2D
    q1p: np.ndarray
    q1m: np.ndarray
    q2p: np.ndarray
    q2m: np.ndarray

    def __post_init__(self):
        g = self.grid
        for name, shape in (
            ("q1p", g.shape_q1),
            ("q1m", g.shape_q1),
            ("q2p", g.shape_q2),
            ("q2m", g.shape_q2),
        ):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"component {name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "FluxField":
        return cls(grid, np.zeros(grid.shape_q1), np.zeros(grid.shape_q1),
                   np.zeros(grid.shape_q2), np.zeros(grid.shape_q2))

    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.q1p, self.q1m, self.q2p, self.q2m)

    def copy(self) -> "FluxField":
        return FluxField(self.grid, self.q1p.copy(), self.q1m.copy(),
                         self.q2p.copy(), self.q2m.copy())

    def __add__(self, other: "FluxField") -> "FluxField":
        _check_same_grid(self, other)
        return FluxField(self.grid, *(a + b for a, b in zip(self.components(), other.components())))

    def __sub__(self, other: "FluxField") -> "FluxField":
        _check_same_grid(self, other)
        return FluxField(self.grid, *(a - b for a, b in zip(self.components(), other.components())))

    def __mul__(self, a: float) -> "FluxField":
        return FluxField(self.grid, *(c * a for c in self.components()))

    __rmul__ = __mul__


@dataclass
class CoeffField:
    """Nodal samples of the diffusion tensor entries plus the mixing weight chi.

    k11, k12, k22 are arrays over all nodes (0..n_alpha inclusive); k21 = k12
    by symmetry and is not stored.  Pointwise 2x2 ellipticity (k11 > 0,
    k22 > 0, k11*k22 - k12^2 > 0) is enforced at construction.
    """

    grid: Grid2D
    k11: np.ndarray
    k12: np.ndarray
    k22: np.ndarray
    chi: float = 0.5

    def __post_init__(self):
        g = self.grid
        shape = (g.n1 + 1, g.n2 + 1)
        for name in ("k11", "k12", "k22"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 0:
                arr = np.full(shape, float(arr))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)
        self.chi = float(self.chi)
        if not math.isfinite(self.chi):
            raise ValueError("chi must be finite")
        bad = (self.k11 <= 0) | (self.k22 <= 0) | (self.k11 * self.k22 - self.k12 ** 2 <= 0)
        if np.any(bad):
            i1, i2 = np.argwhere(bad)[0]
            raise ValueError(
                f"coefficient tensor not positive definite at node ({i1}, {i2}): "
                f"k11={self.k11[i1, i2]:g}, k12={self.k12[i1, i2]:g}, k22={self.k22[i1, i2]:g}"
            )

    @classmethod
    def from_functions(cls, grid: Grid2D, k11, k12, k22, chi: float = 0.5) -> "CoeffField":
        """Sample coefficient functions (or constants) at all grid nodes."""
        x1, x2 = grid.node_meshgrid()

        def sample(k):
            if callable(k):
                return np.broadcast_to(np.asarray(k(x1, x2), dtype=float), x1.shape).copy()
            return np.full(x1.shape, float(k))

        return cls(grid, sample(k11), sample(k12), sample(k22), chi)

    @classmethod
    def identity(cls, grid: Grid2D, chi: float = 0.5) -> "CoeffField":
        return cls.from_functions(grid, 1.0, 0.0, 1.0, chi)

    @property
    def has_mixed(self) -> bool:
        return bool(np.any(self.k12 != 0.0))

    def _eigen_bounds(self) -> tuple[float, float]:
        mid = 0.5 * (self.k11 + self.k22)
        rad = np.sqrt((0.5 * (self.k11 - self.k22)) ** 2 + self.k12 ** 2)
        return float(np.min(mid - rad)), float(np.max(mid + rad))

    @property
    def k_min(self) -> float:
        """Smallest eigenvalue of the 2x2 tensor over all nodes (> 0)."""
        return self._eigen_bounds()[0]

    @property
    def k_max(self) -> float:
        return self._eigen_bounds()[1]

    @property
    def c_min(self) -> float:
        return 1.0 / self.k_max

    @property
    def c_max(self) -> float:
        return 1.0 / self.k_min


# -- inner products and norms ---------------------------------------------

def scalar_inner_product(y: ScalarField, w: ScalarField) -> float:
    """(y, w) = sum over interior nodes of y*w*h1*h2."""
    _check_same_grid(y, w)
    return float(np.vdot(y.values, w.values)) * y.grid.cell_area


def scalar_norm(y: ScalarField) -> float:
    return math.sqrt(scalar_inner_product(y, y))


def flux_inner_product(q: FluxField, g: FluxField) -> float:
    """Sum of the four componentwise inner products, each with weight h1*h2."""
    _check_same_grid(q, g)
    s = 0.0
    for a, b in zip(q.components(), g.components()):
        s += float(np.vdot(a, b))
    return s * q.grid.cell_area


def flux_norm(q: FluxField) -> float:
    return math.sqrt(flux_inner_product(q, q))


def operator_weighted_norm(q: FluxField, apply_w, *, tol: float = 1e-12) -> float:
    """sqrt((Wq, q)) for a self-adjoint operator W given as a callable.

    Raises if the quadratic form is negative beyond -tol*(q, q), which is the
    signal that the weight operator is not positive on this input.
    """
    val = flux_inner_product(apply_w(q), q)
    floor = tol * flux_inner_product(q, q)
    if val < -floor:
        raise ValueError(f"weight operator not positive on this input: (Wq, q) = {val:g}")
    return math.sqrt(max(val, 0.0))
