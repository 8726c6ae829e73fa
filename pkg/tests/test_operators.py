import math

import numpy as np
import pytest

from fluxschemes.grid import (CoeffField, FluxField, ScalarField, build_grid,
                              flux_inner_product, flux_norm,
                              scalar_inner_product, scalar_norm)
from fluxschemes.operators import (KOperator, apply_A, apply_C, apply_D,
                                   apply_Dstar, apply_K, apply_L_stencil,
                                   apply_Q, apply_R, build_sparse_D,
                                   flatten_flux, flatten_scalar,
                                   split_R_triangular, unflatten_flux,
                                   unflatten_scalar)


def random_scalar(grid, rng):
    return ScalarField(grid, rng.standard_normal(grid.shape_interior))


def random_flux(grid, rng):
    return FluxField(grid, rng.standard_normal(grid.shape_q1),
                     rng.standard_normal(grid.shape_q1),
                     rng.standard_normal(grid.shape_q2),
                     rng.standard_normal(grid.shape_q2))


def variable_coeff(grid, chi):
    return CoeffField.from_functions(
        grid,
        lambda a, b: 1.0 + 0.5 * a * b,
        lambda a, b: 0.25 * (1.0 + a * b),
        lambda a, b: 1.0 + 0.25 * a ** 2,
        chi,
    )


def bruteforce_scalar_inner(y, w):
    g = y.grid
    total = 0.0
    for i in range(g.n1 - 1):
        for j in range(g.n2 - 1):
            total += y.values[i, j] * w.values[i, j]
    return total * g.h1 * g.h2


def bruteforce_flux_inner(q, w):
    g = q.grid
    total = 0.0
    for qa, wa in zip(q.components(), w.components()):
        for i in range(qa.shape[0]):
            for j in range(qa.shape[1]):
                total += qa[i, j] * wa[i, j]
    return total * g.h1 * g.h2


class TestApplyD:
    def test_zero(self):
        g = build_grid(1, 1, 4, 4)
        q = apply_D(ScalarField.zeros(g))
        for c in q.components():
            assert np.all(c == 0.0)

    def test_delta_forward_difference(self):
        # delta at (0.5, 0.5) on the 4x4 grid: q1p = -4 at x1 = 0.25 and +4 at x1 = 0.5
        g = build_grid(1, 1, 4, 4)
        y = ScalarField.zeros(g)
        y.values[1, 1] = 1.0            # node (2, 2) = (0.5, 0.5)
        q = apply_D(y)
        assert q.q1p[1, 1] == pytest.approx(-4.0)   # i1 = 1, i2 = 2
        assert q.q1p[2, 1] == pytest.approx(4.0)
        others = q.q1p.copy()
        others[1, 1] = others[2, 1] = 0.0
        assert np.all(others == 0.0)

    def test_linear_function_with_ghost(self):
        # y = x1: q1p = -1 except next to the far boundary where the ghost zero
        # turns the difference into +x1/h1 = +3 at x1 = 0.75
        g = build_grid(1, 1, 4, 4)
        y = ScalarField.from_function(g, lambda a, b: a)
        q = apply_D(y)
        assert np.allclose(q.q1p[:3, :], -1.0)
        assert np.allclose(q.q1p[3, :], 3.0)

    def test_forward_backward_share_interval_values(self):
        rng = np.random.default_rng(2)
        g = build_grid(1, 2, 5, 4)
        q = apply_D(random_scalar(g, rng))
        assert np.array_equal(q.q1p, q.q1m)
        assert np.array_equal(q.q2p, q.q2m)


class TestApplyDstar:
    def test_zero(self):
        g = build_grid(1, 1, 4, 4)
        out = apply_Dstar(FluxField.zeros(g))
        assert np.all(out.values == 0.0)

    def test_dstar_d_delta(self):
        # (D* D delta)(center) = 4 * 2/h^2 = 128 on the 4x4 unit grid
        g = build_grid(1, 1, 4, 4)
        y = ScalarField.zeros(g)
        y.values[1, 1] = 1.0
        out = apply_Dstar(apply_D(y))
        assert out.values[1, 1] == pytest.approx(128.0)

    def test_adjoint_pairing_random(self):
        rng = np.random.default_rng(4)
        for (n1, n2) in [(4, 4), (5, 7), (8, 8), (16, 16)]:
            g = build_grid(1.0, 1.5, n1, n2)
            for _ in range(5):
                y = random_scalar(g, rng)
                q = random_flux(g, rng)
                lhs = bruteforce_flux_inner(apply_D(y), q)
                rhs = bruteforce_scalar_inner(y, apply_Dstar(q))
                assert abs(lhs - rhs) <= 1e-12 * scalar_norm(y) * flux_norm(q)


class TestKOperator:
    def test_identity_scaled(self):
        # k11 = k22 = 2, k12 = 0 -> K q = q
        rng = np.random.default_rng(5)
        g = build_grid(1, 1, 4, 4)
        K = KOperator(CoeffField.from_functions(g, 2.0, 0.0, 2.0))
        q = random_flux(g, rng)
        out = apply_K(q, K)
        for a, b in zip(out.components(), q.components()):
            assert np.allclose(a, b, atol=0)

    def test_degenerate_coefficients_rejected(self):
        g = build_grid(1, 1, 4, 4)
        with pytest.raises(ValueError):
            CoeffField.from_functions(g, 0.0, 0.0, 0.0)

    def test_single_entry_coupling_chi_one(self):
        # chi = 1, k12 = 1, unit entry in q2p at (0.5, 0.5):
        # output picks up 1/2 in q1p there plus the diagonal k22/2 in q2p
        g = build_grid(1, 1, 4, 4)
        K = KOperator(CoeffField.from_functions(g, 2.0, 1.0, 2.0, chi=1.0))
        q = FluxField.zeros(g)
        q.q2p[1, 2] = 1.0               # node (2, 2) = (0.5, 0.5)
        out = apply_K(q, K)
        assert out.q1p[2, 1] == pytest.approx(0.5)   # q1p index of node (2, 2)
        assert out.q2p[1, 2] == pytest.approx(1.0)   # (k22/2) * 1
        assert out.q1m[1, 1] == pytest.approx(0.0)   # (1-chi) coupling vanishes

    def test_self_adjoint(self):
        rng = np.random.default_rng(6)
        g = build_grid(1, 1.4, 6, 5)
        K = KOperator(variable_coeff(g, 0.3))
        for _ in range(10):
            q = random_flux(g, rng)
            w = random_flux(g, rng)
            lhs = flux_inner_product(apply_K(q, K), w)
            rhs = flux_inner_product(q, apply_K(w, K))
            assert abs(lhs - rhs) <= 1e-12 * flux_norm(q) * flux_norm(w)

    def test_positive_definite_quadratic_form(self):
        rng = np.random.default_rng(7)
        g = build_grid(1, 1, 5, 5)
        K = KOperator(variable_coeff(g, 0.5))
        for _ in range(5):
            q = random_flux(g, rng)
            assert flux_inner_product(apply_K(q, K), q) > 0.0


class TestApplyC:
    def test_diagonal_case(self):
        rng = np.random.default_rng(8)
        g = build_grid(1, 1, 4, 4)
        K = KOperator(CoeffField.from_functions(g, 3.0, 0.0, 5.0))
        q = random_flux(g, rng)
        out = apply_C(q, K)
        assert np.allclose(out.q1p, q.q1p / 1.5)
        assert np.allclose(out.q2m, q.q2m / 2.5)

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        g = build_grid(1, 1, 6, 7)
        K = KOperator(variable_coeff(g, 0.4))
        for _ in range(5):
            q = random_flux(g, rng)
            rt = apply_C(apply_K(q, K), K)
            diff = max(np.max(np.abs(a - b)) for a, b in zip(rt.components(), q.components()))
            scale = max(np.max(np.abs(c)) for c in q.components())
            assert diff <= 1e-12 * scale

    def test_near_singular_block_admissibility(self):
        # k11 = k22 = 1, k12 = 0.999: admissible iff max(1, (2chi-1)^2)*k12^2 < 1.
        # Cross-check the construction-time SPD decision against a dense
        # eigenvalue oracle on the explicitly-built 4x4 block.
        g = build_grid(1, 1, 4, 4)
        k12 = 0.999
        for chi in (0.5, 0.0, 1.0, 1.4, 2.0, -0.5):
            block = np.zeros((4, 4))
            b, d = 0.5 * chi * k12, 0.5 * (1 - chi) * k12
            block[0, 0] = block[1, 1] = 0.5
            block[2, 2] = block[3, 3] = 0.5
            block[0, 2] = block[2, 0] = block[1, 3] = block[3, 1] = b
            block[0, 3] = block[3, 0] = block[1, 2] = block[2, 1] = d
            spd = np.linalg.eigvalsh(block)[0] > 0
            try:
                KOperator(CoeffField.from_functions(g, 1.0, k12, 1.0, chi=chi))
                built = True
            except ValueError as exc:
                built = False
                assert "not positive definite" in str(exc)
            assert built == spd, f"chi={chi}: construction {built} vs oracle {spd}"

    def test_round_trip_near_singular(self):
        rng = np.random.default_rng(10)
        g = build_grid(1, 1, 4, 4)
        K = KOperator(CoeffField.from_functions(g, 1.0, 0.999, 1.0, chi=0.5))
        q = random_flux(g, rng)
        rt = apply_K(apply_C(q, K), K)
        diff = max(np.max(np.abs(a - b)) for a, b in zip(rt.components(), q.components()))
        assert diff <= 1e-12 * max(np.max(np.abs(c)) for c in q.components())


class TestLStencil:
    def test_zero(self):
        g = build_grid(1, 1, 4, 4)
        coeff = CoeffField.identity(g)
        out = apply_L_stencil(ScalarField.zeros(g), coeff)
        assert np.all(out.values == 0.0)

    def test_identity_delta_five_point(self):
        # k = identity: 4/h^2 = 64 at the center, -16 on axial neighbors,
        # zero on diagonal neighbors
        g = build_grid(1, 1, 4, 4)
        y = ScalarField.zeros(g)
        y.values[1, 1] = 1.0
        out = apply_L_stencil(y, CoeffField.identity(g))
        assert out.values[1, 1] == pytest.approx(64.0)
        assert out.values[0, 1] == pytest.approx(-16.0)
        assert out.values[2, 1] == pytest.approx(-16.0)
        assert out.values[1, 0] == pytest.approx(-16.0)
        assert out.values[1, 2] == pytest.approx(-16.0)
        assert out.values[0, 0] == pytest.approx(0.0)
        assert out.values[2, 2] == pytest.approx(0.0)

    @pytest.mark.parametrize("chi", [0.0, 0.5, 1.0])
    def test_matches_operator_composition(self, chi):
        rng = np.random.default_rng(11)
        g = build_grid(1.0, 1.3, 8, 7)
        coeff = variable_coeff(g, chi)
        K = KOperator(coeff)
        for _ in range(10):
            y = random_scalar(g, rng)
            via_ops = apply_A(y, K)
            via_stencil = apply_L_stencil(y, coeff)
            assert np.max(np.abs(via_ops.values - via_stencil.values)) <= 1e-12 * scalar_norm(y) / g.cell_area ** 0.5


class TestApplyA:
    def test_symmetry(self):
        rng = np.random.default_rng(12)
        g = build_grid(1, 1, 6, 6)
        K = KOperator(variable_coeff(g, 0.5))
        for _ in range(10):
            y = random_scalar(g, rng)
            w = random_scalar(g, rng)
            lhs = scalar_inner_product(apply_A(y, K), w)
            rhs = scalar_inner_product(y, apply_A(w, K))
            assert abs(lhs - rhs) <= 1e-12 * scalar_norm(y) * scalar_norm(w) / g.cell_area

    def test_positivity(self):
        rng = np.random.default_rng(13)
        g = build_grid(1, 1, 5, 5)
        K = KOperator(variable_coeff(g, 0.5))
        for _ in range(5):
            y = random_scalar(g, rng)
            assert scalar_inner_product(apply_A(y, K), y) > 0.0

    def test_smallest_eigenvalue_identity_coefficients(self):
        # dense eigensolver oracle vs the closed-form 1D sine spectrum
        from fluxschemes.analysis import dense_scalar_operator
        g = build_grid(1, 1, 4, 4)
        K = KOperator(CoeffField.identity(g))
        a = dense_scalar_operator(lambda y: apply_A(y, K), g)
        lam = np.linalg.eigvalsh(0.5 * (a + a.T))
        h = 0.25
        expected = (4 / h ** 2) * (math.sin(math.pi * h / 2) ** 2 + math.sin(math.pi * h / 2) ** 2)
        assert lam[0] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(18.745, abs=5e-4)


class TestRandQ:
    def test_composition_identity(self):
        rng = np.random.default_rng(14)
        g = build_grid(1, 1, 5, 5)
        q = random_flux(g, rng)
        r1 = apply_R(q)
        r2 = apply_D(apply_Dstar(q))
        for a, b in zip(r1.components(), r2.components()):
            assert np.array_equal(a, b)

    def test_q_confined_to_component(self):
        # Q on a field supported on q1p stays in q1p and is the per-row 1D
        # second-difference operator along x1
        g = build_grid(1, 1, 4, 4)
        q = FluxField.zeros(g)
        q.q1p[1, 1] = 1.0
        out = apply_Q(q)
        assert np.all(out.q1m == 0.0) and np.all(out.q2p == 0.0) and np.all(out.q2m == 0.0)
        h2 = g.h1 ** 2
        col = out.q1p[:, 1]
        assert col[1] == pytest.approx(2.0 / h2)
        assert col[0] == pytest.approx(-1.0 / h2)
        assert col[2] == pytest.approx(-1.0 / h2)
        assert col[3] == pytest.approx(0.0)
        assert np.all(out.q1p[:, 0] == 0.0) and np.all(out.q1p[:, 2] == 0.0)

    def test_r_quadratic_form_is_divergence_norm(self):
        rng = np.random.default_rng(15)
        g = build_grid(1, 1.1, 6, 5)
        q = random_flux(g, rng)
        lhs = flux_inner_product(apply_R(q), q)
        d = apply_Dstar(q)
        assert lhs == pytest.approx(scalar_inner_product(d, d), rel=1e-12)
        assert lhs >= 0.0


class TestSparseAndSplit:
    def test_sparse_d_matches_matrix_free(self):
        rng = np.random.default_rng(16)
        g = build_grid(1.0, 2.0, 5, 4)
        d = build_sparse_D(g)
        y = random_scalar(g, rng)
        assert np.allclose(d @ flatten_scalar(y), flatten_flux(apply_D(y)), atol=1e-14)

    def test_flatten_round_trips(self):
        rng = np.random.default_rng(17)
        g = build_grid(1.0, 2.0, 5, 4)
        y = random_scalar(g, rng)
        q = random_flux(g, rng)
        y2 = unflatten_scalar(g, flatten_scalar(y))
        q2 = unflatten_flux(g, flatten_flux(q))
        assert np.array_equal(y.values, y2.values)
        for a, b in zip(q.components(), q2.components()):
            assert np.array_equal(a, b)

    def test_split_identities(self):
        g = build_grid(1, 1, 2, 2)
        split = split_R_triangular(g)
        assert (split.R1 + split.R2 - split.R).nnz == 0
        assert (split.R2 - split.R1.T).nnz == 0
        assert np.allclose(split.R1.diagonal(), 0.5 * split.R.diagonal(), atol=0)

    def test_split_matches_matrix_free_R(self):
        rng = np.random.default_rng(18)
        g = build_grid(1, 1.7, 4, 5)
        split = split_R_triangular(g)
        q = random_flux(g, rng)
        direct = split.R @ flatten_flux(q)
        free = flatten_flux(apply_R(q))
        assert np.allclose(direct, free, atol=1e-11)

    def test_dimension_guard(self):
        g = build_grid(1, 1, 600, 600)
        with pytest.raises(ValueError, match="refusing"):
            split_R_triangular(g)


class TestConsistencyOrders:
    """Difference operators vs the analytic operators on a smooth function."""

    def test_stencil_second_order(self):
        from fluxschemes.analysis import make_manufactured, coeff_field_from_case
        case = make_manufactured("b")
        errs = []
        hs = []
        for n in (8, 16, 32):
            g = build_grid(1, 1, n, n)
            coeff = coeff_field_from_case(case, g, 0.5)
            u = ScalarField.from_function(g, lambda a, b: case.u(a, b, 0.0))
            lu = apply_L_stencil(u, coeff)
            x1, x2 = g.interior_meshgrid()
            exact = -case.elliptic_apply(x1, x2, 0.0)
            inner = np.s_[2:-2, 2:-2]       # nodes away from the boundary
            errs.append(np.max(np.abs(lu.values[inner] - exact[inner])))
            hs.append(g.h1)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope >= 1.8

    def test_gradient_first_order(self):
        from fluxschemes.analysis import make_manufactured
        case = make_manufactured("a")
        errs = []
        hs = []
        for n in (8, 16, 32):
            g = build_grid(1, 1, n, n)
            u = ScalarField.from_function(g, lambda a, b: case.u(a, b, 0.0))
            q = apply_D(u)
            worst = 0.0
            for comp, deriv in (("q1p", case.u_x1), ("q1m", case.u_x1),
                                ("q2p", case.u_x2), ("q2m", case.u_x2)):
                x1, x2 = g.halfgrid_meshgrid(comp)
                exact = -deriv(x1, x2, 0.0)
                worst = max(worst, np.max(np.abs(getattr(q, comp) - exact)))
            errs.append(worst)
            hs.append(g.h1)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope >= 0.9
