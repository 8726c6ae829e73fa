"""Manufactured solutions, convergence studies, and stability certification.

The manufactured cases carry closed-form solution derivatives and coefficient
derivatives, from which the source

    f = du/dt - [k11 u_11 + 2 k12 u_12 + k22 u_22
                 + (d1 k11 + d2 k12) u_1 + (d1 k12 + d2 k22) u_2]

is assembled, so that u solves the anisotropic parabolic equation exactly.
Convergence studies refine either the mesh (errors against the nodal
restriction of u) or the time step (errors against the exact solution or
against a fine-step reference for the same mesh, which isolates the temporal
error when the spatial error would otherwise dominate).  The stability probe
assembles the dense one-step transition operator of a scheme with direct
solves and certifies its B-weighted norm via a generalized eigenproblem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .grid import (CoeffField, FluxField, Grid2D, ScalarField, build_grid,
                   flux_norm, scalar_norm)
from .operators import (KOperator, apply_A, apply_D, apply_Q, apply_R,
                        flatten_flux, flatten_scalar, split_R_triangular,
                        unflatten_flux, unflatten_scalar)
from .schemes import (SCALAR_KINDS, SchemeConfig, step_flux_system,
                      step_flux_weighted, step_lod_diagonal,
                      step_lod_triangular, step_scalar_weighted)

__all__ = [
    "ManufacturedCase",
    "make_manufactured",
    "coeff_field_from_case",
    "exact_scalar_field",
    "exact_flux_target",
    "ConvergenceReport",
    "convergence_study",
    "StabilityCertificate",
    "stability_probe",
    "dense_scalar_operator",
    "dense_flux_operator",
]

CASE_IDS = ("a", "b", "c", "d")


@dataclass
class ManufacturedCase:
    """Closed-form solution, its derivatives, and coefficient functions.

    All callables are vectorized over coordinate arrays: u-like functions
    take (x1, x2, t), coefficient-like functions take (x1, x2).
    """

    name: str
    u: Callable
    u_t: Callable
    u_x1: Callable
    u_x2: Callable
    u_x1x1: Callable
    u_x1x2: Callable
    u_x2x2: Callable
    k11: Callable
    k12: Callable
    k22: Callable
    k11_x1: Callable
    k12_x1: Callable
    k12_x2: Callable
    k22_x2: Callable

    def source(self, x1, x2, t):
        """Right-hand side induced by u and the coefficient tensor."""
        div_flux = (self.k11(x1, x2) * self.u_x1x1(x1, x2, t)
                    + 2.0 * self.k12(x1, x2) * self.u_x1x2(x1, x2, t)
                    + self.k22(x1, x2) * self.u_x2x2(x1, x2, t)
                    + (self.k11_x1(x1, x2) + self.k12_x2(x1, x2)) * self.u_x1(x1, x2, t)
                    + (self.k12_x1(x1, x2) + self.k22_x2(x1, x2)) * self.u_x2(x1, x2, t))
        return self.u_t(x1, x2, t) - div_flux

    def elliptic_apply(self, x1, x2, t):
        """The spatial operator applied to u (source minus du/dt)."""
        return self.u_t(x1, x2, t) - self.source(x1, x2, t)

    def validate_derivatives(self, rng: np.random.Generator, l1: float = 1.0,
                             l2: float = 1.0, n_points: int = 50,
                             tol: float = 1e-6) -> float:
        """Spot-check all stored derivatives by central differences.

        Returns the worst absolute mismatch; raises if it exceeds tol.
        """
        eps = 1e-6        # first derivatives
        eps2 = 1e-4       # second derivatives (balance truncation vs cancellation)
        pad = 2 * eps2
        x1 = rng.uniform(pad, l1 - pad, n_points)
        x2 = rng.uniform(pad, l2 - pad, n_points)
        t = rng.uniform(0.0, 1.0, n_points)

        def cd(f, axis):
            if axis == 0:
                return (f(x1 + eps, x2, t) - f(x1 - eps, x2, t)) / (2 * eps)
            if axis == 1:
                return (f(x1, x2 + eps, t) - f(x1, x2 - eps, t)) / (2 * eps)
            return (f(x1, x2, t + eps) - f(x1, x2, t - eps)) / (2 * eps)

        def cd2(f, axis):
            if axis == 0:
                return (f(x1 + eps2, x2, t) - 2 * f(x1, x2, t) + f(x1 - eps2, x2, t)) / eps2 ** 2
            return (f(x1, x2 + eps2, t) - 2 * f(x1, x2, t) + f(x1, x2 - eps2, t)) / eps2 ** 2

        def cdmix(f):
            return (f(x1 + eps2, x2 + eps2, t) - f(x1 + eps2, x2 - eps2, t)
                    - f(x1 - eps2, x2 + eps2, t) + f(x1 - eps2, x2 - eps2, t)) / (4 * eps2 ** 2)

        def kcd(k, axis):
            if axis == 0:
                return (k(x1 + eps, x2) - k(x1 - eps, x2)) / (2 * eps)
            return (k(x1, x2 + eps) - k(x1, x2 - eps)) / (2 * eps)

        worst = 0.0
        pairs = [
            (self.u_x1(x1, x2, t), cd(self.u, 0)),
            (self.u_x2(x1, x2, t), cd(self.u, 1)),
            (self.u_t(x1, x2, t), cd(self.u, 2)),
            (self.u_x1x1(x1, x2, t), cd2(self.u, 0)),
            (self.u_x2x2(x1, x2, t), cd2(self.u, 1)),
            (self.u_x1x2(x1, x2, t), cdmix(self.u)),
            (self.k11_x1(x1, x2), kcd(self.k11, 0)),
            (self.k12_x1(x1, x2), kcd(self.k12, 0)),
            (self.k12_x2(x1, x2), kcd(self.k12, 1)),
            (self.k22_x2(x1, x2), kcd(self.k22, 1)),
        ]
        for got, ref in pairs:
            worst = max(worst, float(np.max(np.abs(np.asarray(got) - ref))))
        if worst > tol:
            raise AssertionError(f"derivative mismatch {worst:g} exceeds {tol:g} in case {self.name}")
        return worst


def _zero2(x1, x2):
    return np.zeros_like(np.asarray(x1, dtype=float))


def make_manufactured(case_id: str, l1: float = 1.0, l2: float = 1.0) -> ManufacturedCase:
    """Built-in manufactured cases on the rectangle (0, l1) x (0, l2).

    a: decaying sine product with the identity tensor.
    b: the same solution with variable k11, k22 and a mixed entry k12.
    c: the k12 = 0 variant of b (for the locally one-dimensional schemes).
    d: constant diagonal anisotropy k11 = 1, k22 = 25.
    """
    p1 = math.pi / l1
    p2 = math.pi / l2

    def u(x1, x2, t):
        return np.exp(-t) * np.sin(p1 * x1) * np.sin(p2 * x2)

    def u_t(x1, x2, t):
        return -u(x1, x2, t)

    def u_x1(x1, x2, t):
        return np.exp(-t) * p1 * np.cos(p1 * x1) * np.sin(p2 * x2)

    def u_x2(x1, x2, t):
        return np.exp(-t) * p2 * np.sin(p1 * x1) * np.cos(p2 * x2)

    def u_x1x1(x1, x2, t):
        return -(p1 ** 2) * u(x1, x2, t)

    def u_x2x2(x1, x2, t):
        return -(p2 ** 2) * u(x1, x2, t)

    def u_x1x2(x1, x2, t):
        return np.exp(-t) * p1 * p2 * np.cos(p1 * x1) * np.cos(p2 * x2)

    base = dict(u=u, u_t=u_t, u_x1=u_x1, u_x2=u_x2,
                u_x1x1=u_x1x1, u_x1x2=u_x1x2, u_x2x2=u_x2x2)

    if case_id == "a":
        return ManufacturedCase(
            name="a", **base,
            k11=lambda x1, x2: np.ones_like(np.asarray(x1, dtype=float)),
            k12=_zero2,
            k22=lambda x1, x2: np.ones_like(np.asarray(x1, dtype=float)),
            k11_x1=_zero2, k12_x1=_zero2, k12_x2=_zero2, k22_x2=_zero2,
        )
    if case_id in ("b", "c"):
        mixed = case_id == "b"
        return ManufacturedCase(
            name=case_id, **base,
            k11=lambda x1, x2: 1.0 + 0.5 * x1 * x2,
            k12=(lambda x1, x2: 0.25 * (1.0 + x1 * x2)) if mixed else _zero2,
            k22=lambda x1, x2: 1.0 + 0.25 * x1 ** 2,
            k11_x1=lambda x1, x2: 0.5 * x2 + np.zeros_like(np.asarray(x1, dtype=float)),
            k12_x1=(lambda x1, x2: 0.25 * x2 + np.zeros_like(np.asarray(x1, dtype=float))) if mixed else _zero2,
            k12_x2=(lambda x1, x2: 0.25 * x1 + np.zeros_like(np.asarray(x2, dtype=float))) if mixed else _zero2,
            k22_x2=_zero2,
        )
    if case_id == "d":
        return ManufacturedCase(
            name="d", **base,
            k11=lambda x1, x2: np.ones_like(np.asarray(x1, dtype=float)),
            k12=_zero2,
            k22=lambda x1, x2: 25.0 * np.ones_like(np.asarray(x1, dtype=float)),
            k11_x1=_zero2, k12_x1=_zero2, k12_x2=_zero2, k22_x2=_zero2,
        )
    raise ValueError(f"unknown manufactured case {case_id!r}; expected one of {CASE_IDS}")


def coeff_field_from_case(case: ManufacturedCase, grid: Grid2D, chi: float = 0.5) -> CoeffField:
    return CoeffField.from_functions(grid, case.k11, case.k12, case.k22, chi)


def exact_scalar_field(case: ManufacturedCase, grid: Grid2D, t: float) -> ScalarField:
    return ScalarField.from_function(grid, lambda x1, x2: case.u(x1, x2, t))


def exact_flux_target(case: ManufacturedCase, grid: Grid2D, K: KOperator, t: float) -> FluxField:
    """K applied to the nodal restriction of the negated gradient of u."""
    comps = []
    for comp, deriv in (("q1p", case.u_x1), ("q1m", case.u_x1),
                        ("q2p", case.u_x2), ("q2m", case.u_x2)):
        x1, x2 = grid.halfgrid_meshgrid(comp)
        comps.append(-np.asarray(deriv(x1, x2, t), dtype=float))
    return K.apply(FluxField(grid, *comps))


# -- convergence studies -------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Refinement levels, error norms, and the fitted log-log slope."""

    axis: str                      # "space" | "time"
    values: list[float]            # h or tau per level
    errors: list[float]
    slope: float
    target: tuple[float, float]
    passed: bool
    pollution_ratio: float | None = None

    def running_slopes(self) -> list[float]:
        """Least-squares slope over the first k+1 levels (NaN for the first)."""
        out = [math.nan]
        for k in range(1, len(self.values)):
            out.append(_fit_slope(self.values[:k + 1], self.errors[:k + 1]))
        return out


def _fit_slope(values, errors) -> float:
    x = np.log(np.asarray(values, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _trajectory_error_vs_exact(case, grid, K, cfg):
    """Max over time levels of the error against the exact solution."""
    X1, X2 = grid.interior_meshgrid()
    u0 = exact_scalar_field(case, grid, 0.0)
    err = 0.0
    if cfg.kind in SCALAR_KINDS:
        y = u0
        g = K.apply(apply_D(y)) if cfg.kind == "flux_system" else None
        for n in range(cfg.num_steps()):
            phi = ScalarField(grid, case.source(X1, X2, cfg.source_sample_time(n)))
            if cfg.kind == "scalar_weighted":
                y, _ = step_scalar_weighted(y, phi, K, cfg)
            else:
                y, g, _ = step_flux_system(y, g, phi, K, cfg)
            exact = exact_scalar_field(case, grid, (n + 1) * cfg.tau)
            err = max(err, scalar_norm(y - exact))
        return err
    g = K.apply(apply_D(u0))
    split = split_R_triangular(grid) if cfg.kind == "lod_triangular" else None
    for n in range(cfg.num_steps()):
        phi = ScalarField(grid, case.source(X1, X2, cfg.source_sample_time(n)))
        if cfg.kind == "flux_weighted":
            g, _ = step_flux_weighted(g, phi, K, cfg)
        elif cfg.kind == "lod_diagonal":
            g, _ = step_lod_diagonal(g, phi, K, cfg)
        else:
            g, _ = step_lod_triangular(g, phi, K, cfg, split)
        target = exact_flux_target(case, grid, K, (n + 1) * cfg.tau)
        err = max(err, flux_norm(g - target))
    return err


def _semidiscrete_reference(case, grid, K, kind, times, ref_tau, cg_tol):
    """Fine-step Crank-Nicolson reference states at the requested times.

    Scalar kinds are referenced by the scalar scheme, flux kinds by the flux
    scheme, always at sigma = 0.5 with the given small step.
    """
    ref_kind = "scalar_weighted" if kind in SCALAR_KINDS else "flux_weighted"
    X1, X2 = grid.interior_meshgrid()
    u0 = exact_scalar_field(case, grid, 0.0)
    horizon = max(times)
    nsteps = int(round(horizon / ref_tau))
    cfg = SchemeConfig(ref_kind, 0.5, ref_tau, horizon, monitor=False, cg_tol=cg_tol)
    wanted = {round(t, 12) for t in times}
    snapshots = {}
    if ref_kind == "scalar_weighted":
        state = u0
    else:
        state = K.apply(apply_D(u0))
    for n in range(nsteps):
        phi = ScalarField(grid, case.source(X1, X2, cfg.source_sample_time(n)))
        if ref_kind == "scalar_weighted":
            state, _ = step_scalar_weighted(state, phi, K, cfg)
        else:
            state, _ = step_flux_weighted(state, phi, K, cfg)
        t = round((n + 1) * ref_tau, 12)
        if t in wanted:
            snapshots[t] = state
    return snapshots


def _trajectory_error_vs_reference(case, grid, K, cfg, snapshots):
    X1, X2 = grid.interior_meshgrid()
    u0 = exact_scalar_field(case, grid, 0.0)
    err = 0.0
    if cfg.kind in SCALAR_KINDS:
        y = u0
        g = K.apply(apply_D(y)) if cfg.kind == "flux_system" else None
        for n in range(cfg.num_steps()):
            phi = ScalarField(grid, case.source(X1, X2, cfg.source_sample_time(n)))
            if cfg.kind == "scalar_weighted":
                y, _ = step_scalar_weighted(y, phi, K, cfg)
            else:
                y, g, _ = step_flux_system(y, g, phi, K, cfg)
            ref = snapshots[round((n + 1) * cfg.tau, 12)]
            err = max(err, scalar_norm(y - ref))
        return err
    g = K.apply(apply_D(u0))
    split = split_R_triangular(grid) if cfg.kind == "lod_triangular" else None
    for n in range(cfg.num_steps()):
        phi = ScalarField(grid, case.source(X1, X2, cfg.source_sample_time(n)))
        if cfg.kind == "flux_weighted":
            g, _ = step_flux_weighted(g, phi, K, cfg)
        elif cfg.kind == "lod_diagonal":
            g, _ = step_lod_diagonal(g, phi, K, cfg)
        else:
            g, _ = step_lod_triangular(g, phi, K, cfg, split)
        ref = snapshots[round((n + 1) * cfg.tau, 12)]
        err = max(err, flux_norm(g - ref))
    return err


def convergence_study(case: ManufacturedCase, kind: str, sigma: float, axis: str,
                      levels, *, chi: float = 0.5, l1: float = 1.0, l2: float = 1.0,
                      horizon: float = 0.5, n_fixed: int = 16, tau0: float = 0.02,
                      tau_rule: str = "fixed", reference: str = "exact",
                      target: tuple[float, float] = (1.8, math.inf),
                      cg_tol: float = 1e-10, ref_tau_divisor: int = 40,
                      check_pollution: bool = False) -> ConvergenceReport:
    """Run a refinement study and fit the log-log error slope.

    axis = "space": levels are cell counts N (square grids); the time step is
    tau0, optionally scaled as tau0*(N0/N)^2 (tau_rule = "h2") so first-order
    temporal error refines with the mesh.  Errors compare against the exact
    solution: the scalar H-norm for scalar kinds, the flux V-norm against
    K(-grad u) for flux kinds, taken as the max over time levels.

    axis = "time": levels are time steps on a fixed n_fixed grid.  With
    reference = "exact" the error is taken against the exact solution (the
    grid must be fine enough that the spatial error does not pollute the
    fit; check_pollution estimates that share by re-running the finest level
    on a doubled mesh).  With reference = "semidiscrete" the error is taken
    against a fine-step Crank-Nicolson reference on the same mesh, which
    isolates the temporal error exactly.
    """
    if axis not in ("space", "time"):
        raise ValueError(f"axis must be 'space' or 'time', got {axis!r}")
    values = []
    errors = []
    pollution = None
    if axis == "space":
        n0 = int(levels[0])
        for n_cells in levels:
            n_cells = int(n_cells)
            grid = build_grid(l1, l2, n_cells, n_cells)
            K = KOperator(coeff_field_from_case(case, grid, chi))
            tau = tau0 if tau_rule == "fixed" else tau0 * (n0 / n_cells) ** 2
            cfg = SchemeConfig(kind, sigma, tau, horizon, monitor=False, cg_tol=cg_tol)
            values.append(max(grid.h1, grid.h2))
            errors.append(_trajectory_error_vs_exact(case, grid, K, cfg))
    else:
        grid = build_grid(l1, l2, n_fixed, n_fixed)
        K = KOperator(coeff_field_from_case(case, grid, chi))
        taus = [float(t) for t in levels]
        snapshots = None
        if reference == "semidiscrete":
            ref_tau = min(taus) / ref_tau_divisor
            times = sorted({round((n + 1) * tau, 12) for tau in taus
                            for n in range(int(round(horizon / tau)))})
            for tau in taus:
                if abs(round(tau / ref_tau) * ref_tau - tau) > 1e-9 * tau:
                    raise ValueError("reference step does not divide all study steps")
            snapshots = _semidiscrete_reference(case, grid, K, kind, times, ref_tau, cg_tol)
        for tau in taus:
            cfg = SchemeConfig(kind, sigma, tau, horizon, monitor=False, cg_tol=cg_tol)
            values.append(tau)
            if snapshots is None:
                errors.append(_trajectory_error_vs_exact(case, grid, K, cfg))
            else:
                errors.append(_trajectory_error_vs_reference(case, grid, K, cfg, snapshots))
        if reference == "exact" and check_pollution:
            # one extra spatial level at the finest step estimates the
            # spatial share of the measured error
            fine = build_grid(l1, l2, 2 * n_fixed, 2 * n_fixed)
            K2 = KOperator(coeff_field_from_case(case, fine, chi))
            tau_f = min(taus)
            cfg = SchemeConfig(kind, sigma, tau_f, horizon, monitor=False, cg_tol=cg_tol)
            err_fine = _trajectory_error_vs_exact(case, fine, K2, cfg)
            idx = values.index(tau_f)
            pollution = abs(errors[idx] - err_fine) / max(errors[idx], 1e-300)

    slope = _fit_slope(values, errors)
    passed = target[0] <= slope <= target[1]
    return ConvergenceReport(axis, values, errors, slope, tuple(target), passed,
                             pollution_ratio=pollution)


# -- stability probe -----------------------------------------------------------

MAX_DENSE_DIM = 4096


def dense_scalar_operator(fn, grid: Grid2D) -> np.ndarray:
    """Assemble the dense matrix of a scalar-field operator by unit probing."""
    n = grid.num_interior
    cols = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols[:, j] = flatten_scalar(fn(unflatten_scalar(grid, e)))
        e[j] = 0.0
    return cols


def dense_flux_operator(fn, grid: Grid2D) -> np.ndarray:
    """Assemble the dense matrix of a flux-field operator by unit probing."""
    n = grid.num_flux
    cols = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols[:, j] = flatten_flux(fn(unflatten_flux(grid, e)))
        e[j] = 0.0
    return cols


@dataclass
class StabilityCertificate:
    """Result of the dense transition-operator probe for one (sigma, tau)."""

    kind: str
    sigma: float
    tau: float
    norm: float            # ||T||_B; NaN when B is not positive definite
    b_positive: bool
    stable: bool           # norm <= 1 + tol and B positive
    tol: float = 1e-10


def _dense_scheme_matrices(kind: str, sigma: float, tau: float, K: KOperator):
    """(T, M): dense transition operator and the norm-defining weight matrix."""
    grid = K.grid
    st = sigma * tau
    if kind in SCALAR_KINDS:
        a = dense_scalar_operator(lambda y: apply_A(y, K), grid)
        n = a.shape[0]
        eye = np.eye(n)
        t = np.linalg.solve(eye + st * a, eye - (1.0 - sigma) * tau * a)
        return t, eye
    c = dense_flux_operator(K.apply_inverse, grid)
    r = dense_flux_operator(apply_R, grid)
    if kind == "flux_weighted":
        t = np.linalg.solve(c + st * r, c - (1.0 - sigma) * tau * r)
        return t, c
    if kind == "lod_diagonal":
        q = dense_flux_operator(apply_Q, grid)
        t = np.linalg.solve(c + st * q, c + st * q - tau * r)
        m = c + st * q - 0.5 * tau * r
        return t, m
    if kind == "lod_triangular":
        split = split_R_triangular(grid)
        r1 = split.R1.toarray()
        r2 = split.R2.toarray()
        c_inv = np.diag(1.0 / K.c_diagonal_flat())
        gfac = (c + st * r1) @ c_inv @ (c + st * r2)
        n = c.shape[0]
        t = np.eye(n) - tau * np.linalg.solve(gfac, r)
        m = gfac - 0.5 * tau * r
        return t, m
    raise ValueError(f"unknown scheme kind {kind!r}")


def stability_probe(kind: str, sigma: float, tau: float, K: KOperator,
                    tol: float = 1e-10) -> StabilityCertificate:
    """Dense certificate: assemble T, check B > 0, compute ||T||_B.

    The weight B is the scheme's estimate norm: the plain H-norm for the
    scalar schemes, the C-norm for the flux scheme, and the theorem-specific
    forms for the two splitting schemes.
    """
    grid = K.grid
    dim = grid.num_interior if kind in SCALAR_KINDS else grid.num_flux
    if dim > MAX_DENSE_DIM:
        raise ValueError(f"dense probe dimension {dim} exceeds {MAX_DENSE_DIM}")
    t, m = _dense_scheme_matrices(kind, sigma, tau, K)
    m = 0.5 * (m + m.T)
    eigs = np.linalg.eigvalsh(m)
    b_positive = bool(eigs[0] > 1e-12 * max(abs(eigs[-1]), 1e-300))
    if not b_positive:
        return StabilityCertificate(kind, sigma, tau, math.nan, False, False, tol)
    w = t.T @ m @ t
    w = 0.5 * (w + w.T)
    lam = scipy.linalg.eigh(w, m, eigvals_only=True)
    norm = math.sqrt(max(float(lam[-1]), 0.0))
    return StabilityCertificate(kind, sigma, tau, norm, True, norm <= 1.0 + tol, tol)
