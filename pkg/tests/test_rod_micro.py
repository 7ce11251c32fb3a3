from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibrod.loads import LoadField
from fibrod.rod_convergence import scaled_strain
from fibrod.rod_micro import (
    apriori_norms,
    cross_section_averages,
    evaluate_on_extruded,
    korn_slice_constant,
    solve_rod_micro,
    to_physical,
    twist_diagnostic,
)
from fibrod.tensors import from_mandel

LOAD = LoadField.parse("x3", "chiM*x1", "sin(x3)")


@pytest.fixture(scope="module")
def sol(iso, coarse_rod):
    return solve_rod_micro(coarse_rod, iso, LOAD, 0.25, tol=1e-12)


def interior_points(mesh, n, rng):
    """Random points well inside prisms: near triangle centroids, away from layer faces."""
    sec = mesh.section
    tri = rng.integers(0, sec.n_cells, n)
    lam = rng.dirichlet([8, 8, 8], n)
    xy = np.einsum("na,nad->nd", lam, sec.points[sec.cells[tri]])
    z = mesh.x3_nodes
    k = rng.integers(0, len(z) - 1, n)
    x3 = z[k] + (0.3 + 0.4 * rng.random(n)) * np.diff(z)[k]
    return np.column_stack([xy, x3])


class TestSolve:
    def test_galerkin_identity(self, sol):
        assert sol.galerkin_defect <= 1e-9
        assert sol.residual <= 1e-10

    def test_zero_load(self, iso, coarse_rod):
        s = solve_rod_micro(coarse_rod, iso, LoadField.zero(), 0.3)
        assert not np.any(s.nodal())
        assert s.energy == 0.0

    def test_clamped_ends(self, sol):
        u = sol.nodal()
        z = sol.mesh.points[:, 2]
        ends = (z == 0.0) | (z == 1.0)
        assert not np.any(u[ends])

    def test_superposition(self, iso, coarse_rod):
        f, g = LoadField.parse(0, 0, 1), LoadField.parse("x2", 0, "x1*x3")
        uf = solve_rod_micro(coarse_rod, iso, f, 0.3, tol=1e-13).nodal()
        ug = solve_rod_micro(coarse_rod, iso, g, 0.3, tol=1e-13).nodal()
        us = solve_rod_micro(coarse_rod, iso, LoadField.parse("x2", 0, "1+x1*x3"), 0.3, tol=1e-13).nodal()
        assert np.abs(us - uf - ug).max() <= 1e-9 * np.abs(us).max()

    @settings(max_examples=5)
    @given(st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3))
    def test_scaling(self, iso, coarse_rod, lam):
        base = solve_rod_micro(coarse_rod, iso, LoadField.parse(0, 0, 1), 0.3, tol=1e-13)
        scaled = solve_rod_micro(coarse_rod, iso, LoadField.parse(0, 0, lam), 0.3, tol=1e-13)
        assert np.abs(scaled.nodal() - lam * base.nodal()).max() <= 1e-9 * abs(lam) * np.abs(base.nodal()).max()
        assert scaled.energy == pytest.approx(lam ** 2 * base.energy, rel=1e-9)

    def test_energy_bounded_by_load(self, sol):
        n = apriori_norms(sol)
        assert n["energy"] <= n["load_l2"] * n["u_l2"] * (1 + 1e-12)

    @pytest.mark.parametrize("method", ["cg-amg", "cg-jacobi"])
    def test_iterative_matches_direct(self, iso, coarse_rod, sol, method):
        it = solve_rod_micro(coarse_rod, iso, LOAD, 0.25, tol=1e-12, method=method)
        assert np.abs(it.nodal() - sol.nodal()).max() <= 1e-8 * np.abs(sol.nodal()).max()

    def test_rejects_bad_inputs(self, iso, coarse_rod):
        with pytest.raises(ValueError):
            solve_rod_micro(coarse_rod, iso, LOAD, 0.0)
        with pytest.raises(ValueError):
            solve_rod_micro(coarse_rod, iso, LoadField.parse(0, 0, 1, mode="hom"), 0.5)


class TestPhysicalView:
    def test_strain_matches_scaled_strain(self, sol, rng):
        view = to_physical(sol)
        x = interior_points(sol.mesh, 20, rng)
        X = view.to_physical(x)
        _, g = evaluate_on_extruded(sol.mesh, sol.nodal(), x, gradient=True)
        ref = scaled_strain(g, sol.eps)
        np.testing.assert_allclose(view.strain(X), ref, rtol=0, atol=1e-12 * np.abs(ref).max())

    def test_central_differences_in_physical_coordinates(self, sol, rng):
        view = to_physical(sol)
        x = interior_points(sol.mesh, 20, rng)
        X = view.to_physical(x)
        d = 1e-4
        G = np.zeros((20, 3, 3))
        for j in range(3):
            step = np.zeros(3)
            step[j] = d * (sol.eps if j < 2 else 1.0)
            G[:, :, j] = (view.values(X + step) - view.values(X - step)) / (2 * step[j])
        fd = from_mandel(view.strain(X))
        np.testing.assert_allclose(0.5 * (G + np.swapaxes(G, 1, 2)), fd, rtol=0, atol=1e-9 * np.abs(fd).max())

    def test_roundtrip_and_load(self, sol):
        view = to_physical(sol)
        x = np.array([[0.1, -0.2, 0.4]])
        np.testing.assert_allclose(view.to_fixed(view.to_physical(x)), x)
        f = view.load(view.to_physical(x))
        np.testing.assert_allclose(f, [[sol.eps * 0.4, 0.0, np.sin(0.4)]])

    def test_outside_raises(self, sol):
        with pytest.raises(ValueError):
            evaluate_on_extruded(sol.mesh, sol.nodal(), np.array([[0.0, 0.0, 1.5]]))
        with pytest.raises(ValueError):
            evaluate_on_extruded(sol.mesh, sol.nodal(), np.array([[3.0, 0.0, 0.5]]))


class TestPostprocessing:
    def test_apriori_keys_finite(self, sol):
        n = apriori_norms(sol)
        assert all(np.isfinite(v) and v >= 0 for v in n.values())

    def test_section_averages_shapes(self, sol):
        c = cross_section_averages(sol)
        nl = sol.mesh.layers
        assert c.strain_fiber.shape == (nl, 6) and c.mean_axial.shape == (nl,)
        np.testing.assert_allclose(c.eps_strain_matrix, sol.eps * c.strain_matrix)

    def test_section_average_of_axial_mean(self, sol):
        # mean over the whole slice of u3 at layer midpoints equals the average of the two face means
        c = cross_section_averages(sol)
        assert np.all(np.isfinite(c.mean_axial))

    def test_twist_diagnostic_zero_without_torque(self, iso, coarse_rod):
        s = solve_rod_micro(coarse_rod, iso, LoadField.parse(0, 0, 1), 0.3, tol=1e-13)
        _, tw = twist_diagnostic(s)
        u = s.nodal()
        assert np.abs(tw).max() <= 1e-6 * np.abs(u).max() / 0.3

    def test_korn_constant_positive(self, disk):
        c = korn_slice_constant(disk, 0.3, 0.4, layers=1)
        assert np.isfinite(c) and c > 0
