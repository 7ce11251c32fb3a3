from __future__ import annotations

import dataclasses

import numpy as np
import pytest
import sympy as sym
from hypothesis import given, settings
from hypothesis import strategies as st

from fibrod.loads import LoadField
from fibrod.mesh import SectionGeometry, build_section_mesh
from fibrod.rod_limit import solve_rod_limit
from fibrod.rod_nonlocal import annulus_mesh, decompose_U, solve_z0, solve_z00
from fibrod.tensors import FIBER, MATRIX, ElasticityTensorField, make_isotropic

R, r = 1.0, 0.5


def radial_z0(rho, mu):
    return (R ** 2 * np.log(rho / r) - (rho ** 2 - r ** 2) / 2) / (2 * mu)


def radial_m0(mu):
    rho = sym.symbols("rho", positive=True)
    z = (R ** 2 * sym.log(rho / sym.Rational(1, 2)) - (rho ** 2 - sym.Rational(1, 4)) / 2) / (2 * sym.nsimplify(mu))
    return float(2 * sym.integrate(z * rho, (rho, sym.Rational(1, 2), 1)) / R ** 2)


@pytest.fixture(scope="module")
def section():
    return build_section_mesh(SectionGeometry("disk", R, r), 0.05)


@pytest.fixture(scope="module")
def annulus(section):
    return annulus_mesh(section)


class TestZ0:
    @pytest.mark.parametrize("mu", [1.0, 2.5])
    def test_radial_closed_form(self, annulus, mu):
        C = ElasticityTensorField.constant(make_isotropic(1.0, mu))
        z0, m0 = solve_z0(C, annulus)
        rho = np.hypot(*annulus.points[:, :2].T)
        ex = radial_z0(rho, mu)
        assert np.linalg.norm(z0[:, 2] - ex) / np.linalg.norm(ex) <= 1e-2
        assert np.abs(z0[:, :2]).max() <= 1e-10
        assert m0 == pytest.approx(radial_m0(mu), rel=2e-2)
        assert m0 > 0

    def test_zero_on_interface(self, annulus, iso):
        z0, _ = solve_z0(iso, annulus)
        rho = np.hypot(*annulus.points[:, :2].T)
        inner = np.isclose(rho, r, atol=1e-9)
        assert inner.any() and not np.any(z0[inner])

    def test_area_required_without_metadata(self, annulus, iso):
        bare = dataclasses.replace(annulus, metadata={})
        with pytest.raises(ValueError):
            solve_z0(iso, bare)
        _, m = solve_z0(iso, bare, section_area=np.pi)
        assert m > 0


class TestZ00:
    def test_vanishes_for_axial_only_loads(self, annulus, iso):
        f = LoadField.parse(0, 0, "1+sin(x3)")
        z = solve_z00(iso, f, annulus, [0.1, 0.7])
        assert np.abs(z).max() <= 1e-12

    @settings(max_examples=6)
    @given(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-2))
    def test_linear_in_load(self, annulus, iso, lam):
        base = solve_z00(iso, LoadField.parse(0, 0, "x1*x3"), annulus, [0.4])
        sc = solve_z00(iso, LoadField.parse(0, 0, f"{lam!r}*x1*x3"), annulus, [0.4])
        assert np.abs(sc - lam * base).max() <= 1e-10 * abs(lam) * max(np.abs(base).max(), 1e-300)


class TestDecomposition:
    @pytest.mark.parametrize("f3", ["1", "sin(3.141592653589793*x3)", "x1", "chiM*(1+x2)"])
    def test_identity(self, iso, section, f3):
        lim = solve_rod_limit(iso, LoadField.parse(0, 0, f3), section=section, elements=16)
        d = decompose_U(lim)
        assert d.identity_residual <= 1e-8
        assert np.all(d.m0 > 0)

    def test_z00_zero_for_x3_load(self, iso, section):
        lim = solve_rod_limit(iso, LoadField.parse(0, 0, "sin(3.141592653589793*x3)"), section=section, elements=16)
        d = decompose_U(lim, x3=[0.25, 0.5])
        assert np.abs(d.z00).max() <= 1e-10
        assert d.z0.shape[0] == 1

    def test_mismatched_annulus(self, iso, section):
        lim = solve_rod_limit(iso, LoadField.parse(0, 0, 1), section=section, elements=4)
        other = annulus_mesh(build_section_mesh(SectionGeometry("disk", R, r), 0.2))
        with pytest.raises(ValueError):
            decompose_U(lim, annulus=other)

    def test_axially_varying_tensor_uses_per_slice_fields(self, section):
        base = make_isotropic(1.0, 1.0).entries

        def block(pts):
            return (1 + pts.x[:, 2])[:, None, None] * base

        C = ElasticityTensorField({FIBER: block, MATRIX: block}, depends_on_x=True)
        lim = solve_rod_limit(C, LoadField.parse(0, 0, 1), section=section, elements=4)
        d = decompose_U(lim, x3=[0.2, 0.8])
        assert d.z0.shape[0] == 2
        assert d.m0[0] > d.m0[1]
        assert d.identity_residual <= 1e-8
