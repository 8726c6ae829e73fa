"""Discrete gradient/divergence pair, coefficient operator, and stencils.

The gradient D maps an interior scalar field to the four negated one-sided
differences (with zero Dirichlet ghost values); the divergence D* is its
exact adjoint under the uniform-weight inner products.  The coefficient
operator K acts pointwise in the node index with 4x4 symmetric blocks

    [ k11/2     0      chi*k12/2  (1-chi)*k12/2 ]
    [   0     k11/2  (1-chi)*k12/2  chi*k12/2   ]
    [  ...  symmetric ...  k22/2       0        ]
    [  ...                   0       k22/2      ]

in component order (q1p, q1m, q2p, q2m), with zero padding wherever a partner
component is not defined at that index.  The diagonal entries sample
k_alpha_alpha at the component's own node; the couplings sample k12 at the
shared node.  With this assembly, D* K D coincides node-for-node with the
chi-weighted direct difference stencils for the anisotropic operator,
including the boundary handling, which is the central construction check of
the whole discretization.

A = D* K D acts on scalars; R = D D* and its diagonal part Q act on fluxes.
R is also assembled sparsely in a fixed global ordering (component-major,
lexicographic (i2, i1) within a component) and split as R = R1 + R2 with
R1 the strict lower triangle plus half the diagonal and R2 = R1^T, which is
what the alternating-triangle scheme factorizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import CoeffField, FluxField, Grid2D, ScalarField

__all__ = [
    "apply_D",
    "apply_Dstar",
    "KOperator",
    "apply_K",
    "apply_C",
    "apply_L_stencil",
    "apply_A",
    "apply_R",
    "apply_Q",
    "flatten_scalar",
    "unflatten_scalar",
    "flatten_flux",
    "unflatten_flux",
    "build_sparse_D",
    "TriangularSplit",
    "split_R_triangular",
]

MAX_SPLIT_UNKNOWNS = 1_000_000


# -- gradient and divergence ------------------------------------------------

def apply_D(y: ScalarField) -> FluxField:
    """D y = (-y_x1, -y_xbar1, -y_x2, -y_xbar2) on the four half-grids.

    The forward and backward components over a direction carry the same
    interval differences, only attached to different node indices, so both
    are cut from one differenced array.
    """
    g = y.grid
    yp = y.padded()
    d1 = -np.diff(yp, axis=0) / g.h1   # (n1, n2+1), interval i1 -> [i1, i1+1]
    d2 = -np.diff(yp, axis=1) / g.h2   # (n1+1, n2)
    return FluxField(g, d1[:, 1:-1].copy(), d1[:, 1:-1].copy(),
                     d2[1:-1, :].copy(), d2[1:-1, :].copy())


def apply_Dstar(q: FluxField) -> ScalarField:
    """D* q = q1p_xbar1 + q1m_x1 + q2p_xbar2 + q2m_x2 on the interior nodes."""
    g = q.grid
    out = np.diff(q.q1p, axis=0) / g.h1
    out += np.diff(q.q1m, axis=0) / g.h1
    out += np.diff(q.q2p, axis=1) / g.h2
    out += np.diff(q.q2m, axis=1) / g.h2
    return ScalarField(g, out)


# -- coefficient operator K and its inverse C -------------------------------

class KOperator:
    """Pointwise-in-index coefficient operator on flux fields.

    Positive definiteness of every per-index block (restricted to the
    components present at that index) is checked eagerly at construction:
    the full interior block is congruent to the pair of 2x2 matrices
    [[k11, m], [m, k22]] with m = k12 and m = (2*chi - 1)*k12, so the block
    is SPD iff k11*k22 > max(1, (2*chi-1)^2) * k12^2.  Edge indices carry a
    single component and only need k_alpha_alpha > 0, which CoeffField
    already guarantees.
    """

    def __init__(self, coeff: CoeffField):
        self.coeff = coeff
        g = coeff.grid
        n1, n2 = g.n1, g.n2
        # Diagonal samples at each component's own node, already halved.
        self._d1p = 0.5 * coeff.k11[0:n1, 1:n2]
        self._d1m = 0.5 * coeff.k11[1:n1 + 1, 1:n2]
        self._d2p = 0.5 * coeff.k22[1:n1, 0:n2]
        self._d2m = 0.5 * coeff.k22[1:n1, 1:n2 + 1]
        # Coefficient samples at the interior nodes, where all four
        # components coexist and the mixed couplings act.
        self._a_i = 0.5 * coeff.k11[1:n1, 1:n2]
        self._c_i = 0.5 * coeff.k22[1:n1, 1:n2]
        self._k12_i = coeff.k12[1:n1, 1:n2]
        self._check_blocks()
        self._binv = self._invert_blocks() if coeff.has_mixed else None

    @property
    def grid(self) -> Grid2D:
        return self.coeff.grid

    def _check_blocks(self):
        chi = self.coeff.chi
        mu2 = max(1.0, (2.0 * chi - 1.0) ** 2) * self._k12_i ** 2
        margin = 4.0 * self._a_i * self._c_i - mu2
        bad = margin <= 0.0
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise ValueError(
                f"block not positive definite at node ({i + 1}, {j + 1}) for chi = {chi:g}"
            )

    def _interior_blocks(self) -> np.ndarray:
        """Dense 4x4 blocks at interior nodes, shape (n1-1, n2-1, 4, 4)."""
        chi = self.coeff.chi
        a, c = self._a_i, self._c_i
        b = 0.5 * chi * self._k12_i
        d = 0.5 * (1.0 - chi) * self._k12_i
        blocks = np.zeros(a.shape + (4, 4))
        blocks[..., 0, 0] = a
        blocks[..., 1, 1] = a
        blocks[..., 2, 2] = c
        blocks[..., 3, 3] = c
        blocks[..., 0, 2] = blocks[..., 2, 0] = b
        blocks[..., 1, 3] = blocks[..., 3, 1] = b
        blocks[..., 0, 3] = blocks[..., 3, 0] = d
        blocks[..., 1, 2] = blocks[..., 2, 1] = d
        return blocks

    def _invert_blocks(self) -> np.ndarray:
        return np.linalg.inv(self._interior_blocks())

    def apply(self, q: FluxField) -> FluxField:
        """K q: diagonal scaling plus chi-weighted mixed couplings."""
        if q.grid != self.grid:
            raise ValueError("flux field grid does not match coefficient grid")
        chi = self.coeff.chi
        out1p = self._d1p * q.q1p
        out1m = self._d1m * q.q1m
        out2p = self._d2p * q.q2p
        out2m = self._d2m * q.q2m
        if self.coeff.has_mixed:
            k = 0.5 * self._k12_i
            a1p = q.q1p[1:, :]     # each component restricted to interior nodes
            a1m = q.q1m[:-1, :]
            a2p = q.q2p[:, 1:]
            a2m = q.q2m[:, :-1]
            out1p[1:, :] += k * (chi * a2p + (1.0 - chi) * a2m)
            out1m[:-1, :] += k * ((1.0 - chi) * a2p + chi * a2m)
            out2p[:, 1:] += k * (chi * a1p + (1.0 - chi) * a1m)
            out2m[:, :-1] += k * ((1.0 - chi) * a1p + chi * a1m)
        return FluxField(self.grid, out1p, out1m, out2p, out2m)

    def apply_inverse(self, q: FluxField) -> FluxField:
        """C q = K^{-1} q by exact per-index block inversion."""
        if q.grid != self.grid:
            raise ValueError("flux field grid does not match coefficient grid")
        out1p = q.q1p / self._d1p
        out1m = q.q1m / self._d1m
        out2p = q.q2p / self._d2p
        out2m = q.q2m / self._d2m
        if self._binv is not None:
            rhs = np.stack([q.q1p[1:, :], q.q1m[:-1, :], q.q2p[:, 1:], q.q2m[:, :-1]], axis=-1)
            sol = np.einsum("...ij,...j->...i", self._binv, rhs)
            out1p[1:, :] = sol[..., 0]
            out1m[:-1, :] = sol[..., 1]
            out2p[:, 1:] = sol[..., 2]
            out2m[:, :-1] = sol[..., 3]
        return FluxField(self.grid, out1p, out1m, out2p, out2m)

    def k_diagonal_components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Own-node diagonal samples of K per component (each 0.5*k_alpha_alpha)."""
        return self._d1p, self._d1m, self._d2p, self._d2m

    def c_diagonal_flat(self) -> np.ndarray:
        """Global diagonal of C in the flux flattening order (requires k12 = 0)."""
        if self.coeff.has_mixed:
            raise ValueError("diagonal C requires k12 = 0 (mixed coefficients present)")
        return np.concatenate([
            (1.0 / self._d1p).T.ravel(),
            (1.0 / self._d1m).T.ravel(),
            (1.0 / self._d2p).T.ravel(),
            (1.0 / self._d2m).T.ravel(),
        ])


def apply_K(q: FluxField, K: KOperator) -> FluxField:
    return K.apply(q)


def apply_C(q: FluxField, K: KOperator) -> FluxField:
    return K.apply_inverse(q)


# -- direct difference stencils ---------------------------------------------

def apply_L_stencil(y: ScalarField, coeff: CoeffField) -> ScalarField:
    """Evaluate the chi-weighted anisotropic difference operator directly.

    L = L11 + L22 + chi*(L12_1 + L21_1) + (1-chi)*(L12_2 + L21_2), where
    L_aa averages the two one-sided conservative forms and the mixed parts
    use the two classical cross-difference stencils.  Ghost values outside
    the boundary are zero.  This is an independent evaluation path used to
    verify the operator identity L = D* K D.
    """
    g = y.grid
    h1, h2 = g.h1, g.h2
    chi = coeff.chi
    yp = y.padded()
    k11, k12, k22 = coeff.k11, coeff.k12, coeff.k22

    fx1 = np.diff(yp, axis=0) / h1   # y_x1 at interval-left nodes, (n1, n2+1)
    fx2 = np.diff(yp, axis=1) / h2   # (n1+1, n2)

    # L11 = -1/2 (k11 y_x1)_xbar1 - 1/2 (k11 y_xbar1)_x1
    t11 = -0.5 / h1 * (np.diff(k11[:-1, :] * fx1, axis=0)
                       + np.diff(k11[1:, :] * fx1, axis=0))
    # L22 analog along x2
    t22 = -0.5 / h2 * (np.diff(k22[:, :-1] * fx2, axis=1)
                       + np.diff(k22[:, 1:] * fx2, axis=1))
    out = t11[:, 1:-1] + t22[1:-1, :]

    if coeff.has_mixed:
        w_f1 = k12[:-1, :] * fx1   # k12 * y_x1 at its own node, rows i1 = 0..n1-1
        w_b1 = k12[1:, :] * fx1    # k12 * y_xbar1, rows i1 = 1..n1
        w_f2 = k12[:, :-1] * fx2   # k12 * y_x2, cols i2 = 0..n2-1
        w_b2 = k12[:, 1:] * fx2    # k12 * y_xbar2, cols i2 = 1..n2

        # First stencil: -1/2 (k12 y_x1)_xbar2 - 1/2 (k12 y_xbar1)_x2 and its
        # (2,1) twin with the roles of the directions exchanged.
        m1 = (-0.5 / h2 * (np.diff(w_f1, axis=1)[1:, :-1] + np.diff(w_b1, axis=1)[:-1, 1:])
              - 0.5 / h1 * (np.diff(w_f2, axis=0)[:-1, 1:] + np.diff(w_b2, axis=0)[1:, :-1]))
        # Second stencil: -1/2 (k12 y_x1)_x2 - 1/2 (k12 y_xbar1)_xbar2 + twin.
        m2 = (-0.5 / h2 * (np.diff(w_f1, axis=1)[1:, 1:] + np.diff(w_b1, axis=1)[:-1, :-1])
              - 0.5 / h1 * (np.diff(w_f2, axis=0)[1:, 1:] + np.diff(w_b2, axis=0)[:-1, :-1]))
        out = out + chi * m1 + (1.0 - chi) * m2

    return ScalarField(g, out)


def apply_A(y: ScalarField, K: KOperator) -> ScalarField:
    """A y = D* K D y (self-adjoint, positive definite)."""
    return apply_Dstar(K.apply(apply_D(y)))


def apply_R(q: FluxField) -> FluxField:
    """R q = D D* q."""
    return apply_D(apply_Dstar(q))


def apply_Q(q: FluxField) -> FluxField:
    """Diagonal part of R: each component gets its own D_a^s (D_a^s)*.

    Per component this is a 1D three-point operator along the component's
    direction, applied line by line.
    """
    g = q.grid

    def along_x1(comp):
        w = np.diff(comp, axis=0) / g.h1          # (D^s_1)* comp on interior
        wp = np.zeros((g.n1 + 1, g.n2 - 1))
        wp[1:-1, :] = w
        return -np.diff(wp, axis=0) / g.h1

    def along_x2(comp):
        w = np.diff(comp, axis=1) / g.h2
        wp = np.zeros((g.n1 - 1, g.n2 + 1))
        wp[:, 1:-1] = w
        return -np.diff(wp, axis=1) / g.h2

    return FluxField(g, along_x1(q.q1p), along_x1(q.q1m),
                     along_x2(q.q2p), along_x2(q.q2m))


# -- global flattening and sparse assembly -----------------------------------

def flatten_scalar(y: ScalarField) -> np.ndarray:
    """Interior values in lexicographic (i2, i1) order."""
    return y.values.T.ravel()


def unflatten_scalar(grid: Grid2D, v: np.ndarray) -> ScalarField:
    return ScalarField(grid, np.asarray(v, dtype=float).reshape(grid.n2 - 1, grid.n1 - 1).T)


def flatten_flux(q: FluxField) -> np.ndarray:
    """Component-major (q1p, q1m, q2p, q2m), lexicographic (i2, i1) within each."""
    return np.concatenate([c.T.ravel() for c in q.components()])


def unflatten_flux(grid: Grid2D, v: np.ndarray) -> FluxField:
    v = np.asarray(v, dtype=float)
    if v.size != grid.num_flux:
        raise ValueError(f"flux vector length {v.size} != {grid.num_flux}")
    n1 = grid.n1 * (grid.n2 - 1)
    n2 = (grid.n1 - 1) * grid.n2
    parts = np.split(v, [n1, 2 * n1, 2 * n1 + n2])
    q1p = parts[0].reshape(grid.n2 - 1, grid.n1).T
    q1m = parts[1].reshape(grid.n2 - 1, grid.n1).T
    q2p = parts[2].reshape(grid.n2, grid.n1 - 1).T
    q2m = parts[3].reshape(grid.n2, grid.n1 - 1).T
    return FluxField(grid, q1p.copy(), q1m.copy(), q2p.copy(), q2m.copy())


def _interval_difference_matrix(n: int) -> sp.spmatrix:
    """(n x n-1) map of interior values to interval differences with zero ghosts."""
    return sp.diags([np.ones(n - 1), -np.ones(n - 1)], offsets=[0, -1],
                    shape=(n, n - 1), format="csr")


def build_sparse_D(grid: Grid2D) -> sp.csr_matrix:
    """Sparse matrix of D in the global flattening orders (flux x scalar)."""
    g1 = _interval_difference_matrix(grid.n1)
    g2 = _interval_difference_matrix(grid.n2)
    d1 = -sp.kron(sp.eye(grid.n2 - 1), g1) / grid.h1
    d2 = -sp.kron(g2, sp.eye(grid.n1 - 1)) / grid.h2
    return sp.vstack([d1, d1, d2, d2]).tocsr()


@dataclass
class TriangularSplit:
    """Sparse R = R1 + R2 with R1 the strict lower triangle plus half the
    diagonal in the fixed global ordering, and R2 = R1^T."""

    grid: Grid2D
    R: sp.csr_matrix
    R1: sp.csr_matrix
    R2: sp.csr_matrix


def split_R_triangular(grid: Grid2D, tolerance: float = 0.0) -> TriangularSplit:
    """Assemble sparse R = D D* and its triangular split.

    The assembled product is symmetrized (R is symmetric by construction; the
    sparse product may differ in the last bits across the diagonal) so that
    R1 + R2 = R holds entrywise.
    """
    if grid.num_flux > MAX_SPLIT_UNKNOWNS:
        raise ValueError(
            f"refusing to assemble split with {grid.num_flux} unknowns (> {MAX_SPLIT_UNKNOWNS})"
        )
    d = build_sparse_D(grid)
    r = (d @ d.T).tocsr()
    r = ((r + r.T) * 0.5).tocsr()
    r1 = (sp.tril(r, k=-1) + sp.diags(0.5 * r.diagonal())).tocsr()
    r2 = r1.T.tocsr()
    defect = r1 + r2 - r
    err = 0.0 if defect.nnz == 0 else float(np.max(np.abs(defect.data)))
    if err > tolerance:
        raise AssertionError(f"triangular split defect {err:g} exceeds tolerance {tolerance:g}")
    return TriangularSplit(grid, r, r1, r2)
