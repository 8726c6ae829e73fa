"""Two-level time stepping schemes and the evolution driver.

Five schemes are provided, all advancing one time level per step:

  scalar_weighted   (E + sigma*tau*A) y' = (E - (1-sigma)*tau*A) y + tau*phi
  flux_system       the same y-update driven through the flux pair g = K D y
  flux_weighted     (C + sigma*tau*R) g' = (C - (1-sigma)*tau*R) g + tau*D phi
  lod_diagonal      only Q = diag(R) is shifted to the upper level; four
                    independent batches of tridiagonal line solves
  lod_triangular    factorized (C + st*R1) C^{-1} (C + st*R2) increment form

The driver iterates N = T/tau steps and can monitor the levelwise a priori
estimate appropriate to the scheme; a violation (or an undefined B-weighted
norm) is recorded per step, never raised, so instability experiments are
first-class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import FluxField, ScalarField, flux_inner_product, scalar_norm
from .operators import (KOperator, TriangularSplit, apply_D, apply_Dstar,
                        apply_Q, apply_R, flatten_flux, flatten_scalar,
                        split_R_triangular, unflatten_flux, unflatten_scalar)
from .solvers import SolverReport, solve_spd, solve_tridiagonal_batch, solve_triangular

__all__ = [
    "SCHEME_KINDS",
    "SchemeConfig",
    "StepRecord",
    "EvolutionResult",
    "step_scalar_weighted",
    "step_flux_system",
    "step_flux_weighted",
    "step_lod_diagonal",
    "step_lod_triangular",
    "run_evolution",
]

SCHEME_KINDS = ("scalar_weighted", "flux_system", "flux_weighted",
                "lod_diagonal", "lod_triangular")
SCALAR_KINDS = ("scalar_weighted", "flux_system")
FLUX_KINDS = ("flux_weighted", "lod_diagonal", "lod_triangular")
SOURCE_TIMES = ("weighted", "old", "mid")


@dataclass
class SchemeConfig:
    """Scheme kind, weight sigma, step tau, horizon T, and solver knobs.

    Negative or small sigma is allowed on purpose: instability experiments
    are a feature, not an input error.
    """

    kind: str
    sigma: float
    tau: float
    horizon: float
    monitor: bool = True
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None
    source_time: str = "weighted"
    estimate_slack: float = 1e-8

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}; expected one of {SCHEME_KINDS}")
        if not (self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.horizon < self.tau:
            raise ValueError(f"horizon {self.horizon} shorter than one step tau = {self.tau}")
        if not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite")
        if self.source_time not in SOURCE_TIMES:
            raise ValueError(f"source_time must be one of {SOURCE_TIMES}")

    def num_steps(self) -> int:
        return max(1, int(round(self.horizon / self.tau)))

    def source_sample_time(self, n: int) -> float:
        """Time at which the source of step n -> n+1 is sampled."""
        if self.source_time == "old":
            return n * self.tau
        if self.source_time == "mid":
            return (n + 0.5) * self.tau
        return (n + self.sigma) * self.tau


@dataclass
class StepRecord:
    """Monitored quantities for one time level.

    norm is the scheme's monitored norm of the state at time t; rhs_norm the
    source norm used by the step that produced it (0 for the initial record).
    estimate_satisfied is None when the B-weighted norm is undefined (B not
    positive on the data).
    """

    n: int
    t: float
    norm: float
    rhs_norm: float
    estimate_satisfied: bool | None
    solver_iterations: int
    solver_residual: float
    norm_kind: str


@dataclass
class EvolutionResult:
    config: SchemeConfig
    records: list[StepRecord] = field(default_factory=list)
    y: ScalarField | None = None
    g: FluxField | None = None


class SolverFailure(RuntimeError):
    """An inner solve did not reach its tolerance."""

    def __init__(self, what: str, report: SolverReport):
        super().__init__(f"{what}: {report}")
        self.report = report


def _cg_or_raise(what, apply_op, rhs, cfg) -> tuple[np.ndarray, SolverReport]:
    x, rep = solve_spd(apply_op, rhs, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter)
    if not rep.converged:
        raise SolverFailure(what, rep)
    return x, rep


# -- single steps -------------------------------------------------------------

def step_scalar_weighted(y_n: ScalarField, phi_n: ScalarField, K: KOperator,
                         cfg: SchemeConfig) -> tuple[ScalarField, SolverReport]:
    """One step of the weighted scheme for the scalar unknown."""
    grid = y_n.grid
    st = cfg.sigma * cfg.tau
    rhs = y_n - ((1.0 - cfg.sigma) * cfg.tau) * _A(y_n, K) + cfg.tau * phi_n
    if st == 0.0:
        return rhs, SolverReport(0, 0.0, True)

    def op(v):
        return v + st * flatten_scalar(_A(unflatten_scalar(grid, v), K))

    x, rep = _cg_or_raise("scalar_weighted implicit solve", op, flatten_scalar(rhs), cfg)
    return unflatten_scalar(grid, x), rep


def _A(y: ScalarField, K: KOperator) -> ScalarField:
    return apply_Dstar(K.apply(apply_D(y)))


def step_flux_system(y_n: ScalarField, g_n: FluxField, phi_n: ScalarField,
                     K: KOperator, cfg: SchemeConfig) -> tuple[ScalarField, FluxField, SolverReport]:
    """One step of the weighted scheme for the coupled (y, g) system.

    Substituting g = K D y turns the system into the scalar scheme, so the
    y-update reuses the scalar solve (with the explicit part taken from the
    stored flux) and the new flux is recomputed from the new scalar state.
    """
    grid = y_n.grid
    st = cfg.sigma * cfg.tau
    rhs = y_n - ((1.0 - cfg.sigma) * cfg.tau) * apply_Dstar(g_n) + cfg.tau * phi_n
    if st == 0.0:
        y_next = rhs
        rep = SolverReport(0, 0.0, True)
    else:
        def op(v):
            return v + st * flatten_scalar(_A(unflatten_scalar(grid, v), K))

        x, rep = _cg_or_raise("flux_system implicit solve", op, flatten_scalar(rhs), cfg)
        y_next = unflatten_scalar(grid, x)
    g_next = K.apply(apply_D(y_next))
    return y_next, g_next, rep


def step_flux_weighted(g_n: FluxField, phi_n: ScalarField, K: KOperator,
                       cfg: SchemeConfig) -> tuple[FluxField, SolverReport]:
    """One step of the weighted scheme for the flux unknown."""
    grid = g_n.grid
    st = cfg.sigma * cfg.tau
    rhs = (K.apply_inverse(g_n) - ((1.0 - cfg.sigma) * cfg.tau) * apply_R(g_n)
           + cfg.tau * apply_D(phi_n))
    if st == 0.0:
        return K.apply(rhs), SolverReport(0, 0.0, True)

    def op(v):
        q = unflatten_flux(grid, v)
        return flatten_flux(K.apply_inverse(q) + st * apply_R(q))

    x, rep = _cg_or_raise("flux_weighted implicit solve", op, flatten_flux(rhs), cfg)
    return unflatten_flux(grid, x), rep


def _q_line_tridiag(c_lines: np.ndarray, st: float, h: float):
    """Tridiagonal bands of (C + st*Q) restricted to lines of length n.

    Per line, Q is the path operator with diagonal [1, 2, ..., 2, 1]/h^2 and
    off-diagonals -1/h^2.
    """
    m, n = c_lines.shape
    tdiag = np.full(n, 2.0)
    tdiag[0] = tdiag[-1] = 1.0
    diag = c_lines + st * tdiag[None, :] / (h * h)
    off = np.full((m, n), -st / (h * h))
    return off, diag, off


def step_lod_diagonal(g_n: FluxField, phi_n: ScalarField, K: KOperator,
                      cfg: SchemeConfig) -> tuple[FluxField, SolverReport]:
    """One step of the locally one-dimensional scheme with the diagonal shift.

    (C + st*Q) g' = (C + st*Q) g - tau*(R g - D phi), solved by four
    independent batches of tridiagonal line solves.
    """
    if K.coeff.has_mixed:
        raise ValueError("mixed coefficients present: lod_diagonal requires k12 = 0")
    grid = g_n.grid
    st = cfg.sigma * cfg.tau
    d1p, d1m, d2p, d2m = K.k_diagonal_components()
    qg = apply_Q(g_n)
    rg = apply_R(g_n)
    dphi = apply_D(phi_n)
    rhs = FluxField(
        grid,
        g_n.q1p / d1p + st * qg.q1p - cfg.tau * (rg.q1p - dphi.q1p),
        g_n.q1m / d1m + st * qg.q1m - cfg.tau * (rg.q1m - dphi.q1m),
        g_n.q2p / d2p + st * qg.q2p - cfg.tau * (rg.q2p - dphi.q2p),
        g_n.q2m / d2m + st * qg.q2m - cfg.tau * (rg.q2m - dphi.q2m),
    )

    def solve_comp(rhs_comp, kdiag, axis, h):
        # lines run along `axis`; the batch dimension is the other axis
        r = rhs_comp.T if axis == 0 else rhs_comp
        c = (1.0 / kdiag).T if axis == 0 else 1.0 / kdiag
        lo, di, up = _q_line_tridiag(c, st, h)
        x = solve_tridiagonal_batch(lo, di, up, r)
        return x.T if axis == 0 else x

    g_next = FluxField(
        grid,
        solve_comp(rhs.q1p, d1p, 0, grid.h1),
        solve_comp(rhs.q1m, d1m, 0, grid.h1),
        solve_comp(rhs.q2p, d2p, 1, grid.h2),
        solve_comp(rhs.q2m, d2m, 1, grid.h2),
    )

    # direct solve: report the true relative residual of (C + st*Q) g' = rhs
    lhs = _apply_c_plus_stq(g_next, K, st)
    num = math.sqrt(flux_inner_product(lhs - rhs, lhs - rhs))
    den = math.sqrt(flux_inner_product(rhs, rhs))
    res = num / den if den > 0 else 0.0
    return g_next, SolverReport(0, res, res <= 1e-12)


def _apply_c_plus_stq(q: FluxField, K: KOperator, st: float) -> FluxField:
    return K.apply_inverse(q) + st * apply_Q(q)


def step_lod_triangular(g_n: FluxField, phi_n: ScalarField, K: KOperator,
                        cfg: SchemeConfig, split: TriangularSplit | None = None
                        ) -> tuple[FluxField, SolverReport]:
    """One step of the alternating-triangle scheme.

    Solves (C + st*R1) C^{-1} (C + st*R2) delta = tau*(D phi - R g) by a
    forward substitution, a diagonal multiply, and a backward substitution,
    then sets g' = g + delta.
    """
    if K.coeff.has_mixed:
        raise ValueError("mixed coefficients present: lod_triangular requires k12 = 0")
    grid = g_n.grid
    if split is None:
        split = split_R_triangular(grid)
    st = cfg.sigma * cfg.tau
    w = apply_D(phi_n) - apply_R(g_n)
    rhs = cfg.tau * flatten_flux(w)
    c_diag = K.c_diagonal_flat()
    if st == 0.0:
        delta = rhs / c_diag
    else:
        z1 = solve_triangular(split, "lower", c_diag, st, rhs)
        delta = solve_triangular(split, "upper", c_diag, st, c_diag * z1)

    # residual of the factored operator applied to the returned increment
    t = c_diag * delta + st * (split.R2 @ delta)
    t = t / c_diag
    v = c_diag * t + st * (split.R1 @ t)
    den = float(np.linalg.norm(rhs))
    res = float(np.linalg.norm(v - rhs)) / den if den > 0 else 0.0
    return g_n + unflatten_flux(grid, delta), SolverReport(0, res, res <= 1e-12)


# -- estimate monitors --------------------------------------------------------

class _Monitor:
    """Levelwise estimate bookkeeping for one evolution run."""

    def __init__(self, kind: str, K: KOperator, cfg: SchemeConfig,
                 split: TriangularSplit | None):
        self.kind = kind
        self.K = K
        self.cfg = cfg
        self.split = split
        self.grid = K.grid
        if kind in SCALAR_KINDS:
            self.norm_kind = "H"
        elif kind == "flux_weighted":
            self.norm_kind = "C"
        else:
            self.norm_kind = "B"

    # -- B operator for the LOD estimates (flat vectors) --
    def _apply_B_flat(self, v: np.ndarray) -> np.ndarray:
        st = self.cfg.sigma * self.cfg.tau
        tau = self.cfg.tau
        if self.kind == "lod_diagonal":
            q = unflatten_flux(self.grid, v)
            out = (self.K.apply_inverse(q) + st * apply_Q(q) - 0.5 * tau * apply_R(q))
            return flatten_flux(out)
        c = self.K.c_diagonal_flat()
        t = c * v + st * (self.split.R2 @ v)
        t = t / c
        w = c * t + st * (self.split.R1 @ t)
        return w - 0.5 * tau * (self.split.R @ v)

    def state_norm(self, state) -> float:
        """Monitored norm of a state; NaN when the B-form is not positive."""
        if self.norm_kind == "H":
            return scalar_norm(state)
        if self.norm_kind == "C":
            val = flux_inner_product(self.K.apply_inverse(state), state)
        else:
            v = flatten_flux(state)
            val = float(v @ self._apply_B_flat(v)) * self.grid.cell_area
        qq = flux_inner_product(state, state)
        if val < -1e-12 * qq:
            return math.nan
        return math.sqrt(max(val, 0.0))

    def rhs_norm(self, phi: ScalarField) -> float:
        """Source norm entering the estimate; NaN when undefined."""
        if self.norm_kind == "H":
            return scalar_norm(phi)
        dphi = apply_D(phi)
        if self.norm_kind == "C":
            val = flux_inner_product(self.K.apply(dphi), dphi)
            return math.sqrt(max(val, 0.0))
        w = flatten_flux(dphi)
        if not np.any(w):
            return 0.0
        z, rep = solve_spd(self._apply_B_flat, w, tol=self.cfg.cg_tol,
                           max_iter=self.cfg.cg_max_iter)
        if not rep.converged:
            return math.nan
        val = float(z @ w) * self.grid.cell_area
        if val < 0.0:
            return math.nan
        return math.sqrt(val)

    def check(self, norm_prev: float, norm_new: float, rhs_norm: float) -> bool | None:
        if math.isnan(norm_prev) or math.isnan(norm_new) or math.isnan(rhs_norm):
            return None
        bound = norm_prev + self.cfg.tau * rhs_norm
        slack = self.cfg.estimate_slack * max(norm_new, bound)
        return norm_new <= bound + slack


# -- evolution driver ---------------------------------------------------------

def run_evolution(initial, source, K: KOperator, cfg: SchemeConfig, *,
                  split: TriangularSplit | None = None) -> EvolutionResult:
    """Iterate N = T/tau steps of the configured scheme.

    initial: a ScalarField (used directly for scalar kinds; flux kinds start
    from g0 = K D u0) or, for flux kinds, a FluxField used as g0 directly.
    source: callable f(X1, X2, t) over interior-node coordinate arrays, or
    None for a zero source.  Each step is sampled at the configured source
    time (sigma-weighted by default).
    """
    grid = K.grid
    kind = cfg.kind
    if kind == "lod_triangular" and split is None:
        split = split_R_triangular(grid)
    monitor = _Monitor(kind, K, cfg, split) if cfg.monitor else None

    X1, X2 = grid.interior_meshgrid()

    def phi_at(n: int) -> ScalarField:
        if source is None:
            return ScalarField.zeros(grid)
        t = cfg.source_sample_time(n)
        vals = np.asarray(source(X1, X2, t), dtype=float)
        return ScalarField(grid, np.broadcast_to(vals, grid.shape_interior).copy())

    y: ScalarField | None = None
    g: FluxField | None = None
    if kind in SCALAR_KINDS:
        if not isinstance(initial, ScalarField):
            raise TypeError(f"{kind} needs a ScalarField initial state")
        y = initial.copy()
        if kind == "flux_system":
            g = K.apply(apply_D(y))
    else:
        if isinstance(initial, ScalarField):
            g = K.apply(apply_D(initial))
        elif isinstance(initial, FluxField):
            g = initial.copy()
        else:
            raise TypeError(f"{kind} needs a ScalarField or FluxField initial state")

    records: list[StepRecord] = []
    state = y if kind in SCALAR_KINDS else g
    norm_prev = monitor.state_norm(state) if monitor else math.nan
    nk = monitor.norm_kind if monitor else ""
    records.append(StepRecord(0, 0.0, norm_prev, 0.0, True, 0, 0.0, nk))

    nsteps = cfg.num_steps()
    for n in range(nsteps):
        phi = phi_at(n)
        if kind == "scalar_weighted":
            y, rep = step_scalar_weighted(y, phi, K, cfg)
            state = y
        elif kind == "flux_system":
            y, g, rep = step_flux_system(y, g, phi, K, cfg)
            state = y
        elif kind == "flux_weighted":
            g, rep = step_flux_weighted(g, phi, K, cfg)
            state = g
        elif kind == "lod_diagonal":
            g, rep = step_lod_diagonal(g, phi, K, cfg)
            state = g
        else:
            g, rep = step_lod_triangular(g, phi, K, cfg, split)
            state = g

        t_new = (n + 1) * cfg.tau
        if monitor:
            norm_new = monitor.state_norm(state)
            rhsn = monitor.rhs_norm(phi)
            ok = monitor.check(norm_prev, norm_new, rhsn)
            records.append(StepRecord(n + 1, t_new, norm_new, rhsn, ok,
                                      rep.iterations, rep.residual_norm, nk))
            norm_prev = norm_new
        else:
            records.append(StepRecord(n + 1, t_new, math.nan, math.nan, None,
                                      rep.iterations, rep.residual_norm, ""))

    return EvolutionResult(cfg, records, y=y, g=g)
