"""Limit problem of the fibered rod as ε tends to zero.

The limit displacement is of Bernoulli-Navier type on the whole section,
``u = (xi1, xi2, xi3 - x_alpha xi_alpha')``, enriched by fiber twist and
warping ``(theta x^R, v3)``, in-plane fiber deformation ``w`` and a matrix
corrector ``z`` that vanishes on the fiber. The fiber unknowns ``(v3, w)``
carry no derivative in ``x3`` and are condensed slice by slice into a 4x4
section stiffness acting on the generalized strains
``(a, b1, b2, t) = (xi3', xi1'', xi2'', theta')``. The matrix corrector
solves independent 2D problems per slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from fibrod.fem import operators, quadrature
from fibrod.fem.assembly import (
    MatrixAssembler, element_coupling, element_load, element_stiffness, scatter_rows,
    scatter_vector, vector_dofs,
)
from fibrod.fem.constraints import ConstraintSet, Substitution
from fibrod.fem.elements import ElementData, element_data, hermite_eval, line_data, linear_eval
from fibrod.fem.solver import SPDFactor, SolverError
from fibrod.loads import LoadField
from fibrod.mesh import RegionTaggedMesh, SectionGeometry, build_section_mesh, region_submesh
from fibrod.tensors import FIBER, MATRIX, ElasticityTensorField, EvaluationPoints, require_admissible

SECTION_RULE_DEGREE = 4
GENERALIZED = ("a", "b1", "b2", "t")


@dataclass(frozen=True)
class GeneralizedStrainState:
    """Axial strain ``a``, curvatures ``b1, b2`` and twist rate ``t`` at one ``x3``."""

    a: float
    b1: float
    b2: float
    t: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b1, self.b2, self.t])


# ----------------------------------------------------------------------------
# section data


def _section_rule() -> quadrature.Rule:
    return quadrature.triangle(SECTION_RULE_DEGREE)


def _slice_points(data: ElementData, x3: float, region: np.ndarray) -> EvaluationPoints:
    ne, nq, _ = data.points.shape
    xy = data.points.reshape(-1, 2)
    x = np.column_stack([xy, np.full(len(xy), float(x3))])
    return EvaluationPoints(x, np.repeat(region, nq))


def _cell_points(data: ElementData, macro_x: np.ndarray, region: np.ndarray) -> EvaluationPoints:
    """Cell-coordinate points ``y`` of a section mesh attached to one macro point ``x``."""
    ne, nq, _ = data.points.shape
    y = data.points.reshape(-1, 2)
    x = np.broadcast_to(np.asarray(macro_x, dtype=float), (len(y), 3)).copy()
    return EvaluationPoints(x, np.repeat(region, nq), y)


def _tensor_at(
    C: ElasticityTensorField, data: ElementData, x3: float, region: np.ndarray, macro_x: np.ndarray | None = None,
) -> np.ndarray:
    ne, nq = data.weights.shape
    pts = _slice_points(data, x3, region) if macro_x is None else _cell_points(data, macro_x, region)
    return C.evaluate(pts).reshape(ne, nq, 6, 6)


def _varies_along_axis(C: ElasticityTensorField) -> bool:
    return not C.is_regionwise_constant and C.depends_on_x


def fiber_section_constraints(fiber: RegionTaggedMesh) -> Substitution:
    """Zero mean of ``w1, w2, v3`` and zero rotation moment of ``w`` on the fiber section.

    DOFs are node-major ``(w1, w2, v3)``.
    """
    data = element_data(fiber, rule=_section_rule())
    n = 3 * fiber.n_vertices
    x = data.points  # (ne, nq, 2)
    cells = fiber.cells[data.cells]
    nodal_int = np.einsum("eq,qa->ea", data.weights, data.values)
    x1_int = np.einsum("eq,qa,eq->ea", data.weights, data.values, x[..., 0])
    x2_int = np.einsum("eq,qa,eq->ea", data.weights, data.values, x[..., 1])
    rows = ConstraintSet(n)
    for comp in range(3):
        row = np.zeros(n)
        np.add.at(row, 3 * cells.ravel() + comp, nodal_int.ravel())
        rows.integral(row)
    rot = np.zeros(n)
    np.add.at(rot, 3 * cells.ravel() + 1, x1_int.ravel())
    np.add.at(rot, 3 * cells.ravel(), -x2_int.ravel())
    rows.integral(rot)
    return rows.build()


@dataclass(frozen=True, eq=False)
class CrossSectionStiffness:
    """Condensed section stiffness ``Q`` (energy density ``Q g . g``) at one slice.

    ``generators[:, :, k]`` is the nodal corrector ``(w1, w2, v3)`` for the
    unit generalized strain ``e_k``; ``uncondensed`` is ``int G^T C G``.
    """

    Q: np.ndarray
    generators: np.ndarray  # (nv, 3, 4)
    mesh: RegionTaggedMesh
    x3: float
    uncondensed: np.ndarray
    coupling: np.ndarray  # (n_reduced, 4) = S^T int B^T C G
    reduced_matrix: sp.csr_matrix
    substitution: Substitution

    def correctors(self, g: np.ndarray) -> np.ndarray:
        """Nodal ``(w1, w2, v3)`` for generalized strains ``g`` of shape ``(..., 4)``."""
        return np.einsum("vck,...k->...vc", self.generators, np.asarray(g, dtype=float))


def section_operators(
    C: ElasticityTensorField, fiber: RegionTaggedMesh, x3: float = 0.0, macro_x: np.ndarray | None = None,
):
    """Full fiber-section matrices: ``K = int B^T C B``, ``Cg = int B^T C G``, ``Q0 = int G^T C G``.

    With ``macro_x`` the section is a periodicity-cell disk: the tensor is
    evaluated at ``(x, y)`` with ``y`` the mesh coordinates.
    """
    data = element_data(fiber, rule=_section_rule())
    region = np.full(fiber.n_cells, FIBER, dtype=np.int8)
    D = _tensor_at(C, data, x3, region, macro_x)
    B = operators.section_B(data.grads)
    G = operators.rod_generalized_G(data.points)
    asm = MatrixAssembler(fiber.cells, fiber.n_vertices, 3)
    asm.add(data.cells, element_stiffness(B, D, data.weights))
    edofs = vector_dofs(fiber.cells[data.cells])
    Cg = scatter_rows(edofs, element_coupling(B, D, G, data.weights), 3 * fiber.n_vertices)
    Q0 = np.einsum("eq,eqki,eqkl,eqlj->ij", data.weights, G, D, G)
    return asm.matrix(), Cg, 0.5 * (Q0 + Q0.T)


def condense_section(
    C: ElasticityTensorField, fiber: RegionTaggedMesh, x3: float = 0.0,
    substitution: Substitution | None = None, macro_x: np.ndarray | None = None,
) -> CrossSectionStiffness:
    """Minimize the fiber section energy over ``(w, v3)`` for each unit generalized strain."""
    if np.any(fiber.cell_region != FIBER):
        raise ValueError("condensation needs a fiber-only section mesh")
    K, Cg, Q0 = section_operators(C, fiber, x3, macro_x)
    sub = substitution or fiber_section_constraints(fiber)
    Kr = sub.reduce_matrix(K)
    Cr = sub.S.T @ Cg
    try:
        fac = SPDFactor(Kr)
    except SolverError as exc:
        raise SolverError(f"section condensation system is singular: {exc}") from exc
    X, _ = fac.solve(-Cr, tol=1e-12)
    Q = Q0 + Cr.T @ X
    Q = 0.5 * (Q + Q.T)
    gens = (sub.S @ X).reshape(fiber.n_vertices, 3, 4)
    return CrossSectionStiffness(Q, gens, fiber, float(x3), Q0, Cr, Kr, sub)


# ----------------------------------------------------------------------------
# matrix corrector z


class MatrixSliceSolver:
    """Per-slice problems for the matrix corrector ``z``.

    The form is ``int_M C M_z . M_zbar`` with ``M_z`` packing ``(Ez)_ab``
    and ``d_a z3 / 2``; the load acts on ``z3`` only. On the full section
    every vertex of a fiber cell is fixed to zero; on a matrix-only (annulus)
    mesh the ``interface`` vertices are. Factorizations are cached per slice
    operator.
    """

    def __init__(self, C: ElasticityTensorField, mesh: RegionTaggedMesh):
        self.C = C
        self.section = mesh
        if np.any(mesh.cell_region == FIBER):
            fixed = np.unique(mesh.cells[mesh.cell_region == FIBER])
        else:
            fixed = np.unique(mesh.boundary_vertices("interface"))
        cs = ConstraintSet(3 * mesh.n_vertices).fix((3 * fixed[:, None] + np.arange(3)).ravel())
        self.fixed_vertices = fixed
        self.substitution = cs.build()
        self.data = element_data(mesh, rule=_section_rule())
        self.matrix_cells = mesh.cell_region[self.data.cells] == MATRIX
        self.B = operators.section_B(self.data.grads)
        self.uniform = not _varies_along_axis(C)
        self._factors: dict[float, SPDFactor] = {}

    @property
    def matrix_area(self) -> float:
        return float((self.data.weights * self.matrix_cells[:, None]).sum())

    def full_matrix(self, x3: float = 0.0) -> sp.csr_matrix:
        D = _tensor_at(self.C, self.data, x3, self.section.cell_region)
        w = self.data.weights * self.matrix_cells[:, None]
        asm = MatrixAssembler(self.section.cells, self.section.n_vertices, 3)
        asm.add(self.data.cells, element_stiffness(self.B, D, w))
        return asm.matrix()

    def _factor(self, x3: float) -> SPDFactor:
        key = 0.0 if self.uniform else float(x3)
        fac = self._factors.get(key)
        if fac is None:
            fac = SPDFactor(self.substitution.reduce_matrix(self.full_matrix(key)))
            self._factors[key] = fac
        return fac

    def axial_load_vectors(self, axial: Callable[[float, EvaluationPoints], np.ndarray], x3) -> np.ndarray:
        """Full vectors ``int_M q N_a`` on the ``z3`` component for ``q = axial(x3, points)``."""
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        n = 3 * self.section.n_vertices
        d = self.data
        ne, nq = d.weights.shape
        w = d.weights * self.matrix_cells[:, None]
        edofs = vector_dofs(self.section.cells[d.cells])
        out = np.zeros((n, len(x3)))
        for j, t in enumerate(x3):
            vals = np.zeros((ne, nq, 3))
            vals[..., 2] = np.asarray(axial(t, _slice_points(d, t, self.section.cell_region))).reshape(ne, nq)
            out[:, j] = scatter_vector(edofs, element_load(d.values, vals, w), n)
        return out

    def load_vectors(self, f: LoadField, x3) -> np.ndarray:
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        if f.is_zero:
            return np.zeros((3 * self.section.n_vertices, len(x3)))
        return self.axial_load_vectors(lambda t, pts: f.component(2, pts), x3)

    def solve_vectors(self, F: np.ndarray, x3) -> np.ndarray:
        """Nodal solutions ``(len(x3), nv, 3)`` for full load vectors ``F`` (one column per slice)."""
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        rhs = self.substitution.S.T @ F
        out = np.zeros((len(x3), self.section.n_vertices, 3))
        if not np.any(rhs):
            return out
        if self.uniform:
            X, _ = self._factor(0.0).solve(rhs, tol=1e-12)
            Z = self.substitution.S @ X
        else:
            Z = np.column_stack([
                self.substitution.S @ self._factor(t).solve(rhs[:, j], tol=1e-12)[0] for j, t in enumerate(x3)
            ])
        return Z.T.reshape(len(x3), -1, 3)

    def solve(self, f: LoadField, x3) -> np.ndarray:
        """Nodal ``z`` at each slice, shape ``(len(x3), nv, 3)``."""
        return self.solve_vectors(self.load_vectors(f, x3), x3)

    def energy_density(self, f: LoadField, x3) -> np.ndarray:
        """``int_M C M_z . M_z`` per slice (equal to the slice load work)."""
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        F = self.load_vectors(f, x3)
        Z = self.solve_vectors(F, x3).reshape(len(x3), -1)
        return np.einsum("nj,jn->n", Z, F)

    def integrate_axial(self, nodal: np.ndarray) -> np.ndarray:
        """``int_M z3`` for nodal fields of shape ``(n, nv, 3)``."""
        d = self.data
        w = d.weights * self.matrix_cells[:, None]
        z = np.asarray(nodal)[..., 2][:, self.section.cells[d.cells]]  # (n, ne, 3)
        return np.einsum("eq,qa,nea->n", w, d.values, z)


# ----------------------------------------------------------------------------
# 1D generalized beam


def section_load_integrals(section: RegionTaggedMesh, f: LoadField, x3: np.ndarray) -> np.ndarray:
    """Rows ``int f1, int f2, int f3, -int x1 f3, -int x2 f3`` over the whole section at each ``x3``."""
    x3 = np.asarray(x3, dtype=float)
    out = np.zeros((5,) + x3.shape)
    if f.is_zero:
        return out
    data = element_data(section, rule=_section_rule())
    w = data.weights.ravel()
    xy = data.points.reshape(-1, 2)
    flat = x3.ravel()
    for j, t in enumerate(flat):
        vals = f.evaluate(_slice_points(data, t, section.cell_region))
        idx = np.unravel_index(j, x3.shape)
        out[(0,) + idx] = w @ vals[:, 0]
        out[(1,) + idx] = w @ vals[:, 1]
        out[(2,) + idx] = w @ vals[:, 2]
        out[(3,) + idx] = -(w * xy[:, 0]) @ vals[:, 2]
        out[(4,) + idx] = -(w * xy[:, 1]) @ vals[:, 2]
    return out


@dataclass(frozen=True)
class BeamLayout:
    """Global DOF layout of ``(xi1, xi2, xi3, theta)`` on ``n`` nodes."""

    n_nodes: int

    @property
    def offsets(self) -> tuple[int, int, int, int]:
        n = self.n_nodes
        return 0, 2 * n, 4 * n, 5 * n

    @property
    def size(self) -> int:
        return 6 * self.n_nodes

    def element_dofs(self, herm_dofs: np.ndarray, lin_dofs: np.ndarray) -> np.ndarray:
        o1, o2, o3, o4 = self.offsets
        return np.hstack([herm_dofs + o1, herm_dofs + o2, lin_dofs + o3, lin_dofs + o4])

    def clamped(self) -> np.ndarray:
        n = self.n_nodes
        o1, o2, o3, o4 = self.offsets
        ends = []
        for o in (o1, o2):
            ends += [o, o + 1, o + 2 * (n - 1), o + 2 * (n - 1) + 1]
        ends += [o3, o3 + n - 1, o4, o4 + n - 1]
        return np.array(sorted(ends))

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        o1, o2, o3, o4 = self.offsets
        n = self.n_nodes
        return x[o1:o2].copy(), x[o2:o3].copy(), x[o3:o4].copy(), x[o4:o4 + n].copy()


def beam_strain_matrices(ld) -> np.ndarray:
    """``(ne, nq, 4, 12)`` maps from element DOFs to ``(a, b1, b2, t)``."""
    ne, nq, _ = ld.herm.shape
    Bg = np.zeros((ne, nq, 4, 12))
    Bg[:, :, 0, 8:10] = ld.lin_d1
    Bg[:, :, 1, 0:4] = ld.herm_d2
    Bg[:, :, 2, 4:8] = ld.herm_d2
    Bg[:, :, 3, 10:12] = ld.lin_d1
    return Bg


def beam_load_vectors(ld, loads: np.ndarray) -> np.ndarray:
    """Element load vectors ``(ne, 12)`` from section integrals at the Gauss points."""
    F1, F2, N, M1, M2 = loads
    w = ld.weights
    Fe = np.zeros(w.shape[:1] + (12,))
    Fe[:, 0:4] = np.einsum("eq,eqa->ea", w * F1, ld.herm) + np.einsum("eq,eqa->ea", w * M1, ld.herm_d1)
    Fe[:, 4:8] = np.einsum("eq,eqa->ea", w * F2, ld.herm) + np.einsum("eq,eqa->ea", w * M2, ld.herm_d1)
    Fe[:, 8:10] = np.einsum("eq,qa->ea", w * N, ld.lin)
    return Fe


def _scatter_dense_blocks(edofs: np.ndarray, Ke: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(edofs, edofs.shape[1], axis=1).ravel()
    cols = np.tile(edofs, (1, edofs.shape[1])).ravel()
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


def _free_substitution(n: int, fixed: np.ndarray) -> sp.csr_matrix:
    free = np.setdiff1d(np.arange(n), fixed)
    return sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(n, len(free)))


# ----------------------------------------------------------------------------
# solution


@dataclass(frozen=True, eq=False)
class RodLimitSolution:
    """Solution of the limit problem.

    ``xi1, xi2`` are Hermite DOF vectors ``[v0, s0, v1, s1, ...]``,
    ``xi3, theta`` nodal P1 values on ``x3_nodes``. Fiber correctors and the
    matrix corrector are reconstructed per slice on demand.
    """

    x3_nodes: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray
    theta: np.ndarray
    section: RegionTaggedMesh
    fiber: RegionTaggedMesh
    fiber_parent: np.ndarray
    stiffness_at: Callable[[float], CrossSectionStiffness]
    matrix_solver: MatrixSliceSolver
    tensor: ElasticityTensorField
    load: LoadField
    beam_energy: float
    beam_load_work: float
    method: str = "condensed"
    metadata: dict = field(default_factory=dict)

    @property
    def length(self) -> float:
        return float(self.x3_nodes[-1] - self.x3_nodes[0])

    def xi(self, x3, derivative: int = 0) -> np.ndarray:
        """``(xi1, xi2, xi3, theta)`` (or derivatives; P1 parts only up to order 1) at ``x3``, shape ``(4, n)``."""
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        nodes = self.x3_nodes
        out = np.zeros((4, len(x3)))
        out[0] = hermite_eval(nodes, self.xi1, x3, derivative)
        out[1] = hermite_eval(nodes, self.xi2, x3, derivative)
        if derivative <= 1:
            out[2] = linear_eval(nodes, self.xi3, x3, derivative)
            out[3] = linear_eval(nodes, self.theta, x3, derivative)
        return out

    def generalized_strains(self, x3) -> np.ndarray:
        """``(a, b1, b2, t)`` rows at each ``x3``, shape ``(n, 4)``."""
        d1 = self.xi(x3, 1)
        d2 = self.xi(x3, 2)
        return np.column_stack([d1[2], d2[0], d2[1], d1[3]])

    def state(self, x3: float) -> GeneralizedStrainState:
        return GeneralizedStrainState(*self.generalized_strains([x3])[0])

    def displacement(self, points: np.ndarray) -> np.ndarray:
        """Bernoulli-Navier part ``u`` at 3D points ``(x1, x2, x3)``."""
        p = np.asarray(points, dtype=float)
        v = self.xi(p[:, 2])
        d = self.xi(p[:, 2], 1)
        u3 = v[2] - p[:, 0] * d[0] - p[:, 1] * d[1]
        return np.column_stack([v[0], v[1], u3])

    def fiber_correctors(self, x3) -> np.ndarray:
        """Nodal ``(w1, w2, v3)`` on the fiber section at each ``x3``, shape ``(n, nv_fiber, 3)``."""
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        g = self.generalized_strains(x3)
        return np.stack([self.stiffness_at(t).generators @ g[j] for j, t in enumerate(x3)])

    def z_at(self, x3) -> np.ndarray:
        """Nodal matrix corrector on the full section at each ``x3``, shape ``(n, nv, 3)``."""
        return self.matrix_solver.solve(self.load, x3)

    def fiber_strain(self, x3: float, data: ElementData | None = None) -> tuple[ElementData, np.ndarray]:
        """Mandel ``E_f`` at the quadrature points of the fiber section for one slice."""
        data = data or element_data(self.fiber, rule=_section_rule())
        g = self.generalized_strains([x3])[0]
        p = self.stiffness_at(x3).generators @ g
        pe = p[self.fiber.cells[data.cells]].reshape(len(data.cells), -1)
        E = np.einsum("eqkd,ed->eqk", operators.section_B(data.grads), pe)
        E += operators.rod_generalized_G(data.points) @ g
        return data, E

    def matrix_strain(self, x3: float, data: ElementData | None = None) -> tuple[ElementData, np.ndarray]:
        """Mandel ``E_m`` at the quadrature points of the full section (zero on fiber cells)."""
        data = data or element_data(self.section, rule=_section_rule())
        z = self.z_at([x3])[0]
        ze = z[self.section.cells[data.cells]].reshape(len(data.cells), -1)
        E = np.einsum("eqkd,ed->eqk", operators.section_B(data.grads), ze)
        E[self.section.cell_region[data.cells] == FIBER] = 0.0
        return data, E

    def z_energy(self) -> float:
        """``int_M C E_m . E_m`` by the 1D Gauss rule of the beam mesh."""
        ld = line_data(self.x3_nodes, self.metadata.get("n_gauss", 4))
        dens = self.matrix_solver.energy_density(self.load, ld.points.ravel())
        return float(ld.weights.ravel() @ dens)

    def energy(self) -> float:
        return self.beam_energy + self.z_energy()

    def section_area(self) -> float:
        return float(element_data(self.section, rule=_section_rule()).weights.sum())

    def mean_bn_u3(self, x3) -> np.ndarray:
        """Slice average of the Bernoulli-Navier axial displacement ``u3`` over the whole section."""
        data = element_data(self.section, rule=_section_rule())
        area = data.weights.sum()
        xbar = np.einsum("eq,eqd->d", data.weights, data.points) / area
        v, d = self.xi(x3), self.xi(x3, 1)
        return v[2] - xbar[0] * d[0] - xbar[1] * d[1]

    def mean_u3(self, x3) -> np.ndarray:
        """Slice average of ``u3 + z3`` over the whole section."""
        x3 = np.atleast_1d(np.asarray(x3, dtype=float))
        z_int = self.matrix_solver.integrate_axial(self.z_at(x3))
        return self.mean_bn_u3(x3) + z_int / self.section_area()


def limit_strains(sol: RodLimitSolution, x3) -> tuple[np.ndarray, np.ndarray]:
    """``E_f`` on the fiber section and ``E_m`` on the full section at each slice.

    Shapes ``(n, ne_fiber, nq, 6)`` and ``(n, ne_section, nq, 6)`` (Mandel).
    """
    x3 = np.atleast_1d(np.asarray(x3, dtype=float))
    fdata = element_data(sol.fiber, rule=_section_rule())
    sdata = element_data(sol.section, rule=_section_rule())
    Ef = np.stack([sol.fiber_strain(t, fdata)[1] for t in x3])
    Em = np.stack([sol.matrix_strain(t, sdata)[1] for t in x3])
    return Ef, Em


# ----------------------------------------------------------------------------
# drivers


def _prepare(C, f, geom, length, elements, h, section, x3_nodes):
    if f.mode != "rod":
        raise ValueError("rod limit needs a rod-mode load")
    if section is None:
        if geom is None:
            raise ValueError("either a section geometry or a section mesh is required")
        section = build_section_mesh(geom, h if h is not None else geom.fiber_radius / 15)
    if x3_nodes is None:
        x3_nodes = np.linspace(0.0, float(length), int(elements) + 1)
    x3_nodes = np.asarray(x3_nodes, dtype=float)
    if len(x3_nodes) < 2 or np.any(np.diff(x3_nodes) <= 0):
        raise ValueError("x3 nodes must be strictly increasing")
    fiber, parent = region_submesh(section, FIBER)
    d = element_data(section, rule=_section_rule())
    require_admissible(C, _slice_points(d, 0.0, section.cell_region))
    return section, x3_nodes, fiber, parent


def _stiffness_provider(C, fiber, sub):
    cache: dict[float, CrossSectionStiffness] = {}
    uniform = not _varies_along_axis(C)

    def stiffness_at(x3: float) -> CrossSectionStiffness:
        key = 0.0 if uniform else float(x3)
        st = cache.get(key)
        if st is None:
            st = condense_section(C, fiber, key, sub)
            cache[key] = st
        return st

    return stiffness_at


def solve_rod_limit(
    C: ElasticityTensorField,
    f: LoadField,
    geom: SectionGeometry | None = None,
    length: float = 1.0,
    elements: int = 64,
    h: float | None = None,
    section: RegionTaggedMesh | None = None,
    x3_nodes: np.ndarray | None = None,
    n_gauss: int = 4,
) -> RodLimitSolution:
    """Condensed solve: per-slice section stiffness, then the clamped 1D beam."""
    section, x3_nodes, fiber, parent = _prepare(C, f, geom, length, elements, h, section, x3_nodes)
    sub = fiber_section_constraints(fiber)
    stiffness_at = _stiffness_provider(C, fiber, sub)
    ld = line_data(x3_nodes, n_gauss)
    layout = BeamLayout(len(x3_nodes))
    Q = np.stack([[stiffness_at(t).Q for t in row] for row in ld.points])  # (ne, nq, 4, 4)
    Bg = beam_strain_matrices(ld)
    Ke = np.einsum("eq,eqki,eqkl,eqlj->eij", ld.weights, Bg, Q, Bg)
    edofs = layout.element_dofs(ld.herm_dofs, ld.lin_dofs)
    K = _scatter_dense_blocks(edofs, Ke, layout.size)
    loads = section_load_integrals(section, f, ld.points)
    F = np.bincount(edofs.ravel(), beam_load_vectors(ld, loads).ravel(), minlength=layout.size)
    S = _free_substitution(layout.size, layout.clamped())
    Kr = (S.T @ K @ S).tocsc()
    Fr = S.T @ F
    if np.any(Fr):
        xr, _ = SPDFactor(Kr).solve(Fr, tol=1e-12)
    else:
        xr = np.zeros(Kr.shape[0])
    x = S @ xr
    xi1, xi2, xi3, theta = layout.split(x)
    return RodLimitSolution(
        x3_nodes, xi1, xi2, xi3, theta, section, fiber, parent, stiffness_at,
        MatrixSliceSolver(C, section), C, f, float(xr @ (Kr @ xr)), float(Fr @ xr),
        metadata={"n_gauss": n_gauss, "elements": len(x3_nodes) - 1, "h": section.metadata.get("h")},
    )


def solve_rod_limit_monolithic(
    C: ElasticityTensorField,
    f: LoadField,
    geom: SectionGeometry | None = None,
    length: float = 1.0,
    elements: int = 8,
    h: float | None = None,
    section: RegionTaggedMesh | None = None,
    x3_nodes: np.ndarray | None = None,
    n_gauss: int = 4,
) -> RodLimitSolution:
    """All unknowns in one system: beam DOFs plus a fiber field ``(w, v3)`` per 1D Gauss point.

    The fiber fields live at the quadrature slices of the beam mesh, which
    is the discretization the condensed path eliminates exactly. The matrix
    corrector is decoupled and shared with the condensed path.
    """
    section, x3_nodes, fiber, parent = _prepare(C, f, geom, length, elements, h, section, x3_nodes)
    sub = fiber_section_constraints(fiber)
    ld = line_data(x3_nodes, n_gauss)
    layout = BeamLayout(len(x3_nodes))
    ne, nq = ld.weights.shape
    Bg = beam_strain_matrices(ld)
    edofs = layout.element_dofs(ld.herm_dofs, ld.lin_dofs)
    nr = sub.n_reduced
    nb = layout.size
    n_total = nb + ne * nq * nr
    blocks_r, blocks_c, blocks_v = [], [], []
    ops: dict[float, tuple] = {}
    uniform = not _varies_along_axis(C)

    def add(r, c, v):
        blocks_r.append(r.ravel())
        blocks_c.append(c.ravel())
        blocks_v.append(v.ravel())

    for e in range(ne):
        for q in range(nq):
            t = float(ld.points[e, q])
            key = 0.0 if uniform else t
            if key not in ops:
                K, Cg, Q0 = section_operators(C, fiber, key)
                Kr = sub.reduce_matrix(K).tocoo()
                ops[key] = (Kr, sub.S.T @ Cg, Q0)
            Kr, Cr, Q0 = ops[key]
            w = ld.weights[e, q]
            B = Bg[e, q]  # (4, 12)
            dofs = edofs[e]
            base = nb + (e * nq + q) * nr
            add(np.repeat(dofs, 12), np.tile(dofs, 12), w * (B.T @ Q0 @ B))
            add(Kr.row + base, Kr.col + base, w * Kr.data)
            cross = w * (Cr @ B)  # (nr, 12)
            rr = np.arange(nr)[:, None] + base
            add(np.broadcast_to(rr, cross.shape), np.broadcast_to(dofs[None, :], cross.shape), cross)
            add(np.broadcast_to(dofs[None, :], cross.shape), np.broadcast_to(rr, cross.shape), cross)
    A = sp.csr_matrix(
        (np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))), shape=(n_total, n_total)
    )
    loads = section_load_integrals(section, f, ld.points)
    F = np.zeros(n_total)
    F[:nb] = np.bincount(edofs.ravel(), beam_load_vectors(ld, loads).ravel(), minlength=nb)
    S = _free_substitution(n_total, layout.clamped())
    Ar = (S.T @ A @ S).tocsc()
    Fr = S.T @ F
    if np.any(Fr):
        xr, _ = SPDFactor(Ar).solve(Fr, tol=1e-12)
    else:
        xr = np.zeros(Ar.shape[0])
    x = S @ xr
    xi1, xi2, xi3, theta = layout.split(x[:nb])
    slice_fields = (sub.S @ x[nb:].reshape(ne * nq, nr).T).T.reshape(ne, nq, fiber.n_vertices, 3)
    return RodLimitSolution(
        x3_nodes, xi1, xi2, xi3, theta, section, fiber, parent, _stiffness_provider(C, fiber, sub),
        MatrixSliceSolver(C, section), C, f, float(xr @ (Ar @ xr)), float(Fr @ xr), method="monolithic",
        metadata={"n_gauss": n_gauss, "elements": len(x3_nodes) - 1, "slice_fields": slice_fields,
                  "unknowns": n_total},
    )
