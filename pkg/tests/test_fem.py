from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sym
from hypothesis import given
from hypothesis import strategies as st

from fibrod.fem import _pykernels, kernels, operators, quadrature
from fibrod.fem.assembly import MatrixAssembler, element_stiffness, vector_dofs
from fibrod.fem.constraints import ConstraintError, ConstraintSet
from fibrod.fem.elements import element_data, hermite_eval, line_data, linear_eval
from fibrod.fem.norms import norm
from fibrod.fem.solver import SolverError, SPDFactor, rigid_body_modes, solve_spd
from fibrod.fem.spaces import FieldHandle, clamped_space, interpolate_nodal
from fibrod.loads import LoadField
from fibrod.mesh import RegionTaggedMesh, extrude, layer_nodes
from fibrod.rod_micro import assemble_energy, assemble_load
from fibrod.tensors import FIBER, MATRIX, ElasticityTensorField, make_isotropic, mandel_to_tensor4

s_, t_, z_ = sym.symbols("s t z")


def tri_integral(expr):
    return sym.integrate(sym.integrate(expr, (t_, 0, 1 - s_)), (s_, 0, 1))


def single_tet(points=None):
    p = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float) if points is None else points
    return RegionTaggedMesh(p, np.array([[0, 1, 2, 3]]), "tetra", np.array([FIBER]))


def single_prism(h=1.0):
    p = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, h], [1, 0, h], [0, 1, h]], float)
    return RegionTaggedMesh(p, np.array([[0, 1, 2, 3, 4, 5]]), "prism", np.array([FIBER]))


class TestQuadrature:
    @pytest.mark.parametrize("degree", [2, 4])
    def test_triangle_exactness(self, degree):
        rule = quadrature.triangle(degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = float(tri_integral(s_ ** a * t_ ** b))
                got = float(rule.weights @ (rule.points[:, 0] ** a * rule.points[:, 1] ** b))
                assert got == pytest.approx(exact, rel=1e-12, abs=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_gauss_line_exactness(self, n):
        rule = quadrature.gauss_line(n)
        for k in range(2 * n):
            assert rule.weights @ rule.points[:, 0] ** k == pytest.approx(1 / (k + 1), rel=1e-13)

    def test_tetrahedron_exactness(self):
        rule = quadrature.tetrahedron(2)
        u = sym.symbols("u")
        for (a, b, c) in [(0, 0, 0), (1, 0, 0), (0, 1, 1), (2, 0, 0), (0, 0, 2)]:
            e = sym.integrate(sym.integrate(sym.integrate(s_ ** a * t_ ** b * u ** c, (u, 0, 1 - s_ - t_)),
                                            (t_, 0, 1 - s_)), (s_, 0, 1))
            got = rule.weights @ (rule.points[:, 0] ** a * rule.points[:, 1] ** b * rule.points[:, 2] ** c)
            assert got == pytest.approx(float(e), rel=1e-12)

    def test_prism_is_tensor_product(self):
        rule = quadrature.prism(4, 3)
        assert rule.weights.sum() == pytest.approx(0.5)
        got = rule.weights @ (rule.points[:, 0] ** 2 * rule.points[:, 2] ** 5)
        assert got == pytest.approx(float(tri_integral(s_ ** 2)) / 6, rel=1e-12)

    def test_unsupported_degrees(self):
        with pytest.raises(ValueError):
            quadrature.triangle(5)
        with pytest.raises(ValueError):
            quadrature.tetrahedron(3)


def sympy_element_matrix(N, coords, domain_integral, C):
    """Exact ``int B^T C B`` from symbolic shape functions ``N`` in physical coordinates ``coords``."""
    C4 = mandel_to_tensor4(C)
    nn = len(N)
    grads = [[sym.diff(Na, x) for x in coords] for Na in N]
    K = np.zeros((3 * nn, 3 * nn))
    for a in range(nn):
        for b in range(nn):
            for i in range(3):
                for k in range(3):
                    # K[ai, bk] = int C_ijkl d_j N_a d_l N_b
                    expr = 0
                    for j in range(3):
                        for l in range(3):
                            c = C4[i, j, k, l]
                            if c != 0:
                                expr += sym.nsimplify(c) * grads[a][j] * grads[b][l]
                    K[3 * a + i, 3 * b + k] = float(domain_integral(sym.expand(expr)))
    return K


class TestElementMatrices:
    def test_tetra_against_symbolic_integration(self):
        C = make_isotropic(1.0, 1.0)
        x, y, w = sym.symbols("x y w")
        N = [1 - x - y - w, x, y, w]
        integ = lambda e: sym.integrate(sym.integrate(sym.integrate(e, (w, 0, 1 - x - y)), (y, 0, 1 - x)), (x, 0, 1))  # noqa: E731
        K_ref = sympy_element_matrix(N, (x, y, w), integ, C.entries)
        mesh = single_tet()
        K = assemble_energy(mesh, ElasticityTensorField.constant(C), operators.strain_scales(1.0),
                            {FIBER: 1.0, MATRIX: 1.0}).toarray()
        np.testing.assert_allclose(K, K_ref, atol=1e-13)

    def test_prism_against_symbolic_integration(self):
        C = make_isotropic(0.7, 1.3)
        x, y, w = sym.symbols("x y w")
        h = 2
        tri = [1 - x - y, x, y]
        N = [n * (1 - w / h) for n in tri] + [n * (w / h) for n in tri]
        integ = lambda e: sym.integrate(sym.integrate(sym.integrate(e, (w, 0, h)), (y, 0, 1 - x)), (x, 0, 1))  # noqa: E731
        K_ref = sympy_element_matrix(N, (x, y, w), integ, C.entries)
        K = assemble_energy(single_prism(h), ElasticityTensorField.constant(C), operators.strain_scales(1.0),
                            {FIBER: 1.0, MATRIX: 1.0}).toarray()
        np.testing.assert_allclose(K, K_ref, atol=1e-12)

    def test_rigid_modes_in_kernel(self, iso, coarse_rod):
        K = assemble_energy(coarse_rod, iso, operators.strain_scales(1.0), {FIBER: 1.0, MATRIX: 0.3})
        R = rigid_body_modes(coarse_rod.points)
        assert np.abs(K @ R).max() <= 1e-12 * abs(K).max()

    @pytest.mark.parametrize("eps", [1.0, 0.3])
    def test_symmetry(self, iso, coarse_rod, eps):
        K = assemble_energy(coarse_rod, iso, operators.strain_scales(eps), {FIBER: 1.0, MATRIX: eps ** 2})
        assert abs(K - K.T).max() <= 1e-12 * abs(K).max()

    def test_zero_weight_gives_zero_matrix(self, iso, coarse_rod):
        K = assemble_energy(coarse_rod, iso, operators.strain_scales(1.0), {FIBER: 0.0, MATRIX: 0.0})
        assert K.nnz == 0 or abs(K).max() == 0.0

    def test_refuses_inadmissible_tensor(self, coarse_rod):
        bad = ElasticityTensorField({FIBER: make_isotropic(1, 1), MATRIX: lambda p: -np.tile(np.eye(6), (len(p), 1, 1))})
        with pytest.raises(ValueError, match="inadmissible"):
            assemble_energy(coarse_rod, bad, operators.strain_scales(1.0), {FIBER: 1.0, MATRIX: 1.0})


class TestLoads:
    def test_prism_lumped_weights(self):
        mesh = extrude(RegionTaggedMesh(np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float),
                                        np.array([[0, 1, 2], [1, 3, 2]]), "triangle", np.array([FIBER, MATRIX])),
                       np.array([0.0, 2.0]))
        F = assemble_load(mesh, LoadField.parse(0, 0, 1)).reshape(-1, 3)
        # each prism: area 1/2, height 2 -> vertex weight 1/6
        tri_count = np.array([1, 2, 2, 1, 1, 2, 2, 1])
        np.testing.assert_allclose(F[:, 2], tri_count / 6, atol=1e-15)
        assert np.all(F[:, :2] == 0)

    def test_component_scaling_is_linear(self, coarse_rod):
        f = LoadField.parse("x3", "x1", "1+x2")
        base = assemble_load(coarse_rod, f).reshape(-1, 3)
        sc = assemble_load(coarse_rod, f, (0.25, 0.25, 1.0)).reshape(-1, 3)
        np.testing.assert_allclose(sc[:, :2], 0.25 * base[:, :2], rtol=0, atol=1e-15)
        np.testing.assert_array_equal(sc[:, 2], base[:, 2])

    def test_zero_load(self, coarse_rod):
        assert not np.any(assemble_load(coarse_rod, LoadField.zero()))


class TestScaledStrain:
    def grads_of(self, mesh, fn):
        nodal = np.array([fn(*p) for p in mesh.points])
        data = element_data(mesh)
        return interpolate_nodal(mesh, nodal, data)[1]

    def strain(self, mesh, fn, eps):
        from fibrod.rod_convergence import scaled_strain
        from fibrod.tensors import from_mandel

        return from_mandel(scaled_strain(self.grads_of(mesh, fn), eps))

    def test_axial(self, coarse_rod):
        E = self.strain(coarse_rod, lambda x1, x2, x3: (0, 0, x3), 0.37)
        np.testing.assert_allclose(E, np.broadcast_to(np.diag([0, 0, 1.0]), E.shape), atol=1e-12)

    def test_inplane_shear(self, coarse_rod):
        E = self.strain(coarse_rod, lambda x1, x2, x3: (x2, 0, 0), 0.1)
        ref = np.zeros((3, 3))
        ref[0, 1] = ref[1, 0] = 50.0
        np.testing.assert_allclose(E, np.broadcast_to(ref, E.shape), rtol=1e-12, atol=1e-10)

    def test_mixed_shear(self, coarse_rod):
        E = self.strain(coarse_rod, lambda x1, x2, x3: (0, 0, x1), 0.5)
        ref = np.zeros((3, 3))
        ref[0, 2] = ref[2, 0] = 1.0
        np.testing.assert_allclose(E, np.broadcast_to(ref, E.shape), atol=1e-12)

    def test_strain_B_matches_symmetric_gradient(self, rng, coarse_rod):
        data = element_data(coarse_rod, np.arange(5))
        ue = rng.standard_normal((5, 18))
        eps = 0.3
        B = operators.strain_B(data.grads, operators.strain_scales(eps))
        got = np.einsum("eqkd,ed->eqk", B, ue)
        grads = np.einsum("eqad,eac->eqcd", data.grads, ue.reshape(5, 6, 3))
        from fibrod.rod_convergence import scaled_strain

        np.testing.assert_allclose(got, scaled_strain(grads, eps), rtol=1e-13, atol=1e-12)


class TestSolver:
    def test_trivial(self):
        x, info = solve_spd(sp.diags([2.0, 2.0]), np.array([2.0, 4.0]))
        np.testing.assert_allclose(x, [1, 2])
        x, info = solve_spd(sp.eye(3), np.zeros(3))
        assert not x.any() and info.residual == 0.0

    @pytest.mark.parametrize("method", ["direct", "cg-amg", "cg-jacobi"])
    def test_random_spd(self, rng, method):
        A = rng.standard_normal((50, 50))
        A = A @ A.T + 50 * np.eye(50)
        b = rng.standard_normal(50)
        x, info = solve_spd(sp.csr_matrix(A), b, tol=1e-12, method=method)
        np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-10)
        assert info.residual <= 1e-12

    def test_indefinite_rejected(self):
        with pytest.raises(SolverError):
            SPDFactor(sp.csc_matrix(np.diag([1.0, -1.0, 2.0])))

    def test_nonconvergence_carries_history(self, rng):
        A = rng.standard_normal((60, 60))
        A = A @ A.T + 1e-6 * np.eye(60)
        with pytest.raises(SolverError) as exc:
            solve_spd(sp.csr_matrix(A), rng.standard_normal(60), tol=1e-14, method="cg-jacobi", maxiter=3)
        assert len(exc.value.history) == 3

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            solve_spd(sp.eye(2), np.ones(2), method="magic")

    def test_rigid_body_modes_are_nullspace_of_strain(self, coarse_rod):
        R = rigid_body_modes(coarse_rod.points)
        data = element_data(coarse_rod)
        B = operators.strain_B(data.grads)
        ed = vector_dofs(coarse_rod.cells)
        for k in range(6):
            E = np.einsum("eqkd,ed->eqk", B, R[:, k][ed])
            assert np.abs(E).max() < 1e-12


class TestConstraints:
    def test_fix_identify_tie(self):
        cs = ConstraintSet(6).fix([0], 2.0).identify([1], [4]).tie(5, [2, 3], [0.5, -1.0])
        sub = cs.build()
        u = sub.expand(np.array([1.0, 3.0, 4.0]))  # free: 1, 2, 3
        assert u[0] == 2.0
        assert u[4] == u[1] == 1.0
        assert u[5] == pytest.approx(0.5 * u[2] - u[3])

    def test_integral_rows_hold(self, rng):
        n = 12
        G = rng.standard_normal((2, n))
        sub = ConstraintSet(n).fix([0, 1]).integral(G[0]).integral(G[1]).build()
        for _ in range(5):
            u = sub.expand(rng.standard_normal(sub.n_reduced))
            np.testing.assert_allclose(G @ u, 0, atol=1e-12)
        assert sub.n_reduced == n - 4

    def test_conflicts(self):
        with pytest.raises(ConstraintError):
            ConstraintSet(3).fix([0], 1.0).identify([0], [1]).fix([1], 2.0).build()
        with pytest.raises(ConstraintError):
            ConstraintSet(3).integral(np.ones(3)).integral(2 * np.ones(3)).build()

    def test_selection_fast_path_matches_product(self, iso, coarse_rod):
        K = assemble_energy(coarse_rod, iso, operators.strain_scales(1.0), {FIBER: 1.0, MATRIX: 1.0})
        sub = clamped_space(coarse_rod).substitution
        assert sub.selection is not None
        ref = (sub.S.T @ K @ sub.S).toarray()
        np.testing.assert_array_equal(sub.reduce_matrix(K).toarray(), ref)

    @given(st.lists(st.integers(0, 19), min_size=1, max_size=8, unique=True))
    def test_fixed_dofs_stay_fixed(self, dofs):
        sub = ConstraintSet(20).fix(dofs, 1.5).build()
        u = sub.expand(np.random.default_rng(0).standard_normal(sub.n_reduced))
        np.testing.assert_array_equal(u[dofs], 1.5)
        assert sub.n_reduced == 20 - len(dofs)


class TestNorms:
    def test_linear_axial_field(self, coarse_section):
        mesh = extrude(coarse_section, layer_nodes(1.0, 3))
        area = coarse_section.region_measure()
        u = mesh.points[:, 2]
        assert norm(u, "L2", mesh) == pytest.approx(np.sqrt(area / 3), rel=1e-13)
        assert norm(u, "H1", mesh) == pytest.approx(np.sqrt(area / 3 + area), rel=1e-13)
        assert norm(u, "L2H1", mesh) == pytest.approx(np.sqrt(area / 3), rel=1e-13)

    def test_unit_volume(self):
        mesh = single_tet(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 6]], float))
        assert norm(np.ones(4), "L2", mesh) == pytest.approx(1.0)
        assert norm(np.zeros(4), "H1", mesh) == 0.0

    def test_inplane_gradient_part(self, coarse_rod):
        u = coarse_rod.points[:, 0] * coarse_rod.points[:, 2]
        # L2H1 drops d3 but keeps d1; on the discrete field compare with explicit quadrature
        data = element_data(coarse_rod)
        vals, grads = interpolate_nodal(coarse_rod, u[:, None], data)
        ref = np.sqrt((data.weights * (vals[..., 0] ** 2 + (grads[..., 0, :2] ** 2).sum(-1))).sum())
        assert norm(u, "L2H1", coarse_rod) == pytest.approx(ref, rel=1e-13)

    def test_region_split(self, coarse_rod, rng):
        u = rng.standard_normal((coarse_rod.n_vertices, 3))
        tot = norm(u, "H1", coarse_rod) ** 2
        parts = norm(u, "H1", coarse_rod, FIBER) ** 2 + norm(u, "H1", coarse_rod, MATRIX) ** 2
        assert parts == pytest.approx(tot, rel=1e-12)

    def test_errors(self, coarse_section):
        with pytest.raises(ValueError):
            norm(np.zeros(coarse_section.n_vertices), "L2H1", coarse_section)
        with pytest.raises(ValueError):
            norm(np.zeros(3), "W1p", coarse_section)

    def test_field_handle(self, coarse_rod):
        space = clamped_space(coarse_rod)
        h = FieldHandle(space, np.ones(space.dim))
        assert norm(h, "L2") == pytest.approx(norm(h.nodal(), "L2", coarse_rod))


class TestHermite:
    def test_cubic_reproduced(self):
        nodes = np.array([0.0, 0.3, 0.55, 1.0])
        p = np.polynomial.Polynomial([0.2, -1.0, 3.0, 2.0])
        dp, d2p = p.deriv(), p.deriv(2)
        dofs = np.ravel([[p(x), dp(x)] for x in nodes])
        x = np.linspace(0, 1, 23)
        np.testing.assert_allclose(hermite_eval(nodes, dofs, x), p(x), atol=1e-13)
        np.testing.assert_allclose(hermite_eval(nodes, dofs, x, 1), dp(x), atol=1e-12)
        np.testing.assert_allclose(hermite_eval(nodes, dofs, x, 2), d2p(x), atol=1e-11)

    def test_linear_eval(self):
        nodes = np.array([0.0, 0.5, 2.0])
        v = np.array([1.0, 2.0, -1.0])
        np.testing.assert_allclose(linear_eval(nodes, v, [0.25, 1.25]), [1.5, 0.5])
        np.testing.assert_allclose(linear_eval(nodes, v, [0.25, 1.25], 1), [2.0, -2.0])

    def test_line_data_integrates(self):
        ld = line_data(np.array([0.0, 0.4, 1.0]), 3)
        assert (ld.weights * ld.points ** 5).sum() == pytest.approx(1 / 6, rel=1e-13)
        # Hermite value functions sum to one
        np.testing.assert_allclose(ld.herm[..., 0] + ld.herm[..., 2], 1.0, atol=1e-14)


class TestKernels:
    def test_backends_agree(self, rng):
        ckern = pytest.importorskip("fibrod.fem._ckernels")
        B = rng.standard_normal((7, 4, 6, 18))
        D = rng.standard_normal((7, 4, 6, 6))
        D = D + np.swapaxes(D, 2, 3)
        w = rng.random((7, 4))
        np.testing.assert_allclose(ckern.element_matrices(B, D, w), _pykernels.element_matrices(B, D, w),
                                   rtol=1e-12, atol=1e-12)

    def test_scatter_backends_agree(self, rng, coarse_rod):
        ckern = pytest.importorskip("fibrod.fem._ckernels")
        outs = []
        Ke = rng.standard_normal((coarse_rod.n_cells, 18, 18))
        for mod in (ckern, _pykernels):
            asm = MatrixAssembler(coarse_rod.cells, coarse_rod.n_vertices)
            edofs = np.ascontiguousarray(vector_dofs(coarse_rod.cells))
            mod.scatter_add_csr(asm.indptr, asm.indices, asm.data, edofs, Ke)
            outs.append(asm.data.copy())
        np.testing.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-12)

    def test_element_stiffness_dispatch(self, rng):
        B = rng.standard_normal((3, 2, 6, 9))
        D = np.eye(6)
        w = np.ones((3, 2))
        ref = np.einsum("eqki,eqkj->eij", B, B)
        np.testing.assert_allclose(element_stiffness(B, D, w), ref, rtol=1e-12)
        assert kernels.BACKEND in ("cython", "python")

    def test_scatter_rejects_missing_pattern_entry(self):
        asm = MatrixAssembler(np.array([[0, 1, 2]]), 4, ncomp=1)
        with pytest.raises(KeyError):
            _pykernels.scatter_add_csr(asm.indptr, asm.indices, asm.data, np.array([[0, 3]]), np.ones((1, 2, 2)))


FALLBACK_SCRIPT = """
import numpy as np
from fibrod.fem import kernels
from fibrod.loads import LoadField
from fibrod.mesh import SectionGeometry, build_rod_mesh
from fibrod.rod_micro import solve_rod_micro
from fibrod.tensors import ElasticityTensorField, make_isotropic
mesh = build_rod_mesh(SectionGeometry("disk", 1.0, 0.5), 1.0, 0.25, layers=3)
C = ElasticityTensorField.constant(make_isotropic(1.0, 1.0))
u = solve_rod_micro(mesh, C, LoadField.parse(0, "x3", 1), 0.3, tol=1e-13).nodal()
print(kernels.BACKEND)
print(repr(float(np.abs(u).sum())))
"""


class TestFallback:
    def run_script(self, pure: bool):
        import os
        import subprocess
        import sys

        env = dict(os.environ, FIBROD_PURE_PYTHON="1" if pure else "0")
        out = subprocess.run([sys.executable, "-c", FALLBACK_SCRIPT], env=env, capture_output=True, text=True,
                             check=True).stdout.split()
        return out[0], float(out[1])

    def test_pure_python_solve_matches_default(self):
        backend, total = self.run_script(pure=True)
        assert backend == "python"
        _, ref = self.run_script(pure=False)
        assert total == pytest.approx(ref, rel=1e-12)
