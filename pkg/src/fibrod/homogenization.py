"""Periodic fiber arrays: the ε problem, the two-scale limit and its nonlocal decomposition.

The ε problem lives on ``(-ell, ell)^2 x (0, ell)`` tiled by ε-cells, with
the weight ``chi_F + eps^2 chi_M`` in front of the standard strain energy
and the load ``(eps f1, eps f2, f3)`` evaluated at ``(x, y)``.

The limit couples macro fields on ``Omega`` (``u_alpha`` P1 in ``x'`` times
Hermite cubic in ``x3``, and P1 x P1 fields ``theta`` and ``abar``, the fiber
average of ``u3``) with cell fields that carry no ``x`` derivative:

* on the matrix part ``Y \\ D`` the periodic field ``p = (u^1_1, u^1_2, u3 - abar)``
  whose values on the disk are tied to the macro gradients
  ``g = (d1u1, d2u1, d1u2, d2u2, d3u1, d3u2, theta)``;
* on the disk the in-plane field ``w`` and the warping ``v3``, driven by
  ``h = (d3 abar, d3^2 u1, d3^2 u2, d3 theta)`` exactly like a rod section.

Both cell problems are represented at the macro quadrature points. The
condensed path eliminates them point by point; the monolithic path keeps
every cell unknown in one sparse system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from fibrod.fem import operators, quadrature
from fibrod.fem.assembly import (
    MatrixAssembler, element_coupling, element_stiffness, scatter_rows, vector_dofs,
)
from fibrod.fem.constraints import ConstraintSet, Substitution
from fibrod.fem.elements import ElementData, element_data, hermite_basis, iter_element_data
from fibrod.fem.norms import norm
from fibrod.fem.solver import SPDFactor, SolveInfo, SolverError, rigid_body_modes, solve_spd
from fibrod.fem.spaces import FieldHandle, SparseSystem, clamped_space, interpolate_nodal
from fibrod.loads import LoadField
from fibrod.mesh import RegionTaggedMesh, build_cell_mesh, region_submesh
from fibrod.rod_limit import (
    CrossSectionStiffness, _cell_points, _tensor_at, condense_section, fiber_section_constraints,
    section_operators,
)
from fibrod.rod_micro import CHUNK, _points, assemble_energy, assemble_load, operator_norm
from fibrod.tensors import FIBER, MATRIX, ElasticityTensorField, EvaluationPoints, require_admissible

CELL_RULE_DEGREE = 4
N_MACRO = 7  # g
N_FIBER = 4  # h

# ----------------------------------------------------------------------------
# the ε problem


def hom_region_weights(eps: float) -> dict[int, float]:
    return {FIBER: 1.0, MATRIX: eps ** 2}


@dataclass(frozen=True, eq=False)
class HomMicroSolution:
    """Solution on a periodic-array mesh; ``energy`` is ``int (chi_F + eps^2 chi_M) C Eu . Eu``."""

    eps: float
    u: FieldHandle
    energy: float
    load_work: float
    residual: float
    solve_info: SolveInfo
    tensor: ElasticityTensorField
    load: LoadField
    diagnostics: dict = field(default_factory=dict)

    @property
    def mesh(self) -> RegionTaggedMesh:
        return self.u.space.mesh

    def nodal(self) -> np.ndarray:
        return self.u.nodal()

    @property
    def galerkin_defect(self) -> float:
        scale = max(abs(self.load_work), abs(self.energy), np.finfo(float).tiny)
        return abs(self.energy - self.load_work) / scale


def _check_array_mesh(mesh: RegionTaggedMesh, eps: float) -> None:
    if mesh.cell_local_points is None or mesh.eps is None:
        raise ValueError("homogenization needs a periodic-array mesh")
    if abs(mesh.eps - eps) > 1e-12 * eps:
        raise ValueError(f"eps = {eps} does not match the mesh (built for eps = {mesh.eps})")


def build_hom_system(
    mesh: RegionTaggedMesh, C: ElasticityTensorField, f: LoadField, eps: float,
) -> tuple:
    if not eps > 0:
        raise ValueError("eps must be positive")
    if f.mode != "hom":
        raise ValueError("homogenization problems need a hom-mode load")
    _check_array_mesh(mesh, eps)
    space = clamped_space(mesh)
    K = assemble_energy(mesh, C, operators.strain_scales(1.0), hom_region_weights(eps))
    F = assemble_load(mesh, f, scaling=(eps, eps, 1.0))
    sub = space.substitution
    system = SparseSystem(sub.reduce_matrix(K), sub.reduce_vector(F, K), {"eps": eps})
    return space, system


def solve_hom_micro(
    mesh: RegionTaggedMesh, C: ElasticityTensorField, f: LoadField, eps: float,
    tol: float = 1e-10, method: str = "auto", diagnostics: bool = True,
) -> HomMicroSolution:
    """Solve the clamped ε problem on the periodic-array mesh."""
    space, system = build_hom_system(mesh, C, f, eps)
    nullspace = None if method == "direct" else space.substitution.S.T @ rigid_body_modes(mesh.points)
    x, info = solve_spd(system.matrix, system.rhs, tol=tol, method=method, near_nullspace=nullspace)
    del system.matrix
    sol_u = FieldHandle(space, x)
    # energy from a fresh quadrature pass, independent of the reduced matrix
    nodal = sol_u.nodal()
    strain = lambda g: operators.strain_B(g, operators.strain_scales(1.0))  # noqa: E731
    J_f = _weighted_energy(mesh, C, nodal, FIBER)
    J_m = _weighted_energy(mesh, C, nodal, MATRIX)
    energy = J_f + eps ** 2 * J_m
    work = _load_work(mesh, f, nodal, eps)
    sol = HomMicroSolution(eps, sol_u, energy, work, info.residual, info, C, f)
    if diagnostics:
        sol.diagnostics.update(hom_apriori(sol, strain))
    return sol


def _tensor_on(mesh: RegionTaggedMesh, C: ElasticityTensorField, data: ElementData) -> np.ndarray:
    ne, nq = data.weights.shape
    if C.is_regionwise_constant:
        reg = mesh.cell_region[data.cells]
        D = np.where((reg == FIBER)[:, None, None], C.region_matrix(FIBER), C.region_matrix(MATRIX))
        return np.broadcast_to(D[:, None], (ne, nq, 6, 6))
    return C.evaluate(_points(mesh, data)).reshape(ne, nq, 6, 6)


def _weighted_energy(mesh: RegionTaggedMesh, C: ElasticityTensorField, nodal: np.ndarray, region: int) -> float:
    """``int_region C Eu . Eu`` by quadrature."""
    flat = nodal.reshape(-1)
    total = 0.0
    for data in iter_element_data(mesh, CHUNK):
        m = mesh.cell_region[data.cells] == region
        if not m.any():
            continue
        E = np.einsum("eqkd,ed->eqk", operators.strain_B(data.grads), flat[vector_dofs(mesh.cells[data.cells])])
        D = _tensor_on(mesh, C, data)
        total += float(np.einsum("eq,eqk,eqkl,eql->", data.weights * m[:, None], E, D, E))
    return total


def _load_work(mesh: RegionTaggedMesh, f: LoadField, nodal: np.ndarray, eps: float) -> float:
    if f.is_zero:
        return 0.0
    sc = np.array([eps, eps, 1.0])
    total = 0.0
    for data in iter_element_data(mesh, CHUNK):
        ne, nq = data.weights.shape
        vals = f.evaluate(_points(mesh, data)).reshape(ne, nq, 3) * sc
        uq, _ = interpolate_nodal(mesh, nodal, data)
        total += float(np.einsum("eq,eqc,eqc->", data.weights, vals, uq))
    return total


def coercivity_constant(mesh: RegionTaggedMesh, C: ElasticityTensorField) -> float:
    """Smallest eigenvalue of the Mandel matrix over the quadrature points of the mesh."""
    if C.is_regionwise_constant:
        return float(min(np.linalg.eigvalsh(C.region_matrix(r))[0] for r in (FIBER, MATRIX)))
    m = np.inf
    for data in iter_element_data(mesh, CHUNK):
        D = C.evaluate(_points(mesh, data))
        m = min(m, float(np.linalg.eigvalsh(0.5 * (D + np.swapaxes(D, 1, 2)))[:, 0].min()))
    return m


def hom_apriori(sol: HomMicroSolution, strain=None) -> dict[str, float]:
    """Bounded quantities of the ε problem and the energy bound terms.

    ``J_eps = int (chi_F + eps^2 chi_M) |Eu|^2``; the bound
    ``m J_eps <= |f| (|eps u_alpha| + |u3|)`` follows from testing with
    the solution itself (Cauchy-Schwarz on the right-hand side).
    """
    mesh, u, eps = sol.mesh, sol.nodal(), sol.eps
    strain = strain or (lambda g: operators.strain_B(g, operators.strain_scales(1.0)))
    Jf = operator_norm(mesh, u, strain, FIBER) ** 2
    Jm = operator_norm(mesh, u, strain, MATRIX) ** 2
    J = Jf + eps ** 2 * Jm
    u3 = norm(u, "L2", mesh, components=(2,))
    eps_u_h1 = eps * norm(u, "H1", mesh)
    eps_ua_l2 = eps * norm(u, "L2", mesh, components=(0, 1))
    f_l2 = _load_norm(mesh, sol.load)
    m = coercivity_constant(mesh, sol.tensor)
    return {
        "u3_l2": u3, "eps_u_h1": eps_u_h1, "J_eps": J, "energy": sol.energy,
        "load_l2": f_l2, "coercivity": m, "energy_bound": f_l2 * (eps_ua_l2 + u3) / m,
    }


def _load_norm(mesh: RegionTaggedMesh, f: LoadField) -> float:
    total = 0.0
    for data in iter_element_data(mesh, CHUNK):
        ne, nq = data.weights.shape
        vals = f.evaluate(_points(mesh, data)).reshape(ne, nq, 3)
        total += float((data.weights * (vals ** 2).sum(axis=2)).sum())
    return float(np.sqrt(total))


def _eval_scalar(phi, pts: EvaluationPoints) -> np.ndarray:
    """Evaluate an :class:`~fibrod.expr.Expression` or a callable on points."""
    if hasattr(phi, "variables") and hasattr(phi, "source"):
        return np.asarray(phi(pts.variables(), len(pts)), dtype=float)
    return np.asarray(phi(pts), dtype=float)


def micro_pairing(mesh: RegionTaggedMesh, nodal: np.ndarray | None, phi, component: int = 2) -> float:
    """``int_Omega u_c(x) phi(x, y(x)) dx`` with ``y`` the ε-cell coordinates (``nodal=None``: ``u = 1``)."""
    total = 0.0
    for data in iter_element_data(mesh, CHUNK):
        ne, nq = data.weights.shape
        pts = _points(mesh, data)
        vals = _eval_scalar(phi, pts).reshape(ne, nq)
        if nodal is not None:
            uq, _ = interpolate_nodal(mesh, nodal[:, [component]], data)
            vals = vals * uq[..., 0]
        total += float((data.weights * vals).sum())
    return total


def fiber_volume(mesh: RegionTaggedMesh) -> float:
    """``int_Omega chi_F`` by cell measures."""
    return float(mesh.cell_measures()[mesh.cell_region == FIBER].sum())


def _midlayer_prism_rule() -> quadrature.Rule:
    t = quadrature.triangle(2)
    return quadrature.Rule(np.column_stack([t.points, np.full(len(t.weights), 0.5)]), t.weights)


def hom_twist_diagnostic(sol: HomMicroSolution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fiber average of ``eps d1 u2`` per ε-cell and layer.

    Returns cell centers ``(k^2, 2)``, layer midpoints ``(nl,)`` and the
    averages ``(nl, k^2)``.
    """
    mesh, eps = sol.mesh, sol.eps
    nl, nt, z = mesh.layers, mesh.section.n_cells, mesh.x3_nodes
    k = int(mesh.metadata["cells_per_side"])
    num = np.zeros((nl, k * k))
    den = np.zeros((nl, k * k))
    nodal = sol.nodal()
    owner2d = mesh.section.cell_owner
    for data in iter_element_data(mesh, CHUNK, _midlayer_prism_rule()):
        m = mesh.cell_region[data.cells] == FIBER
        if not m.any():
            continue
        _, g = interpolate_nodal(mesh, nodal, data)
        layer = data.cells // nt
        own = owner2d[data.cells % nt]
        w = data.weights * m[:, None]
        np.add.at(num, (layer, own), eps * (w * g[:, :, 1, 0]).sum(axis=1))
        np.add.at(den, (layer, own), w.sum(axis=1))
    ell = mesh.geometry.outer_size
    i = np.arange(k)
    c = -ell + eps * (i + 0.5)
    centers = np.column_stack([np.repeat(c, k), np.tile(c, k)])
    return centers, 0.5 * (z[:-1] + z[1:]), num / den


# ----------------------------------------------------------------------------
# cell geometry shared by all macro points


def _cell_rule() -> quadrature.Rule:
    return quadrature.triangle(CELL_RULE_DEGREE)


@dataclass(frozen=True, eq=False)
class HomCell:
    """Periodicity cell with its disk submesh, quadrature and constraint maps.

    ``substitution`` acts on ``[p (3 nv, node-major); g (7)]``: periodic
    identification of opposite edges and the disk ties
    ``p = T(y) g`` on every vertex of a fiber triangle. Its reduced
    columns are the free ``p`` DOFs followed by the seven ``g`` DOFs.
    """

    mesh: RegionTaggedMesh
    fiber: RegionTaggedMesh
    fiber_parent: np.ndarray
    data: ElementData
    matrix_cells: np.ndarray
    disk_vertices: np.ndarray
    substitution: Substitution
    n_free: int
    fiber_substitution: Substitution
    load_map: sp.csr_matrix  # (n_free + 7, n_quad): reduced z3 load vector from quadrature values
    int_Y: np.ndarray  # (nv,) integrals of the hat functions over Y
    int_D: np.ndarray
    int_M: np.ndarray
    area_D: float
    area_Y: float

    @classmethod
    def build(cls, mesh: RegionTaggedMesh) -> "HomCell":
        if mesh.periodic_pairs is None:
            raise ValueError("cell mesh lacks periodic pairs")
        fiber, parent = region_submesh(mesh, FIBER)
        nv = mesh.n_vertices
        data = element_data(mesh, rule=_cell_rule())
        matrix_cells = mesh.cell_region[data.cells] == MATRIX
        disk = np.unique(mesh.cells[mesh.cell_region == FIBER])
        n = 3 * nv + N_MACRO
        cs = ConstraintSet(n)
        for pairs in mesh.periodic_pairs.values():
            for c in range(3):
                cs.identify(3 * pairs[:, 0] + c, 3 * pairs[:, 1] + c)
        T = operators.macro_fiber_trace(mesh.points[disk])
        gdofs = 3 * nv + np.arange(N_MACRO)
        for i, a in enumerate(disk.tolist()):
            for c in range(3):
                nz = np.flatnonzero(T[i, c])
                if len(nz) == 0:
                    cs.fix(3 * a + c)
                else:
                    cs.tie(3 * a + c, gdofs[nz], T[i, c, nz])
        sub = cs.build()
        n_free = sub.n_reduced - N_MACRO
        tail = sub.S[3 * nv:, n_free:].toarray()
        if not np.array_equal(tail, np.eye(N_MACRO)):
            raise SolverError("cell constraint map does not keep the macro unknowns last")
        ne, nq = data.weights.shape
        cells = mesh.cells[data.cells]
        rows = np.repeat(3 * cells + 2, nq, axis=0)  # (ne*nq, 3), hat rows per quadrature point
        vals = (data.weights[:, :, None] * data.values[None, :, :]).reshape(ne * nq, 3)
        cols = np.repeat(np.arange(ne * nq), 3)
        A = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols)), shape=(n, ne * nq))
        load_map = (sub.S.T @ A).tocsr()
        hat = np.einsum("eq,qa->ea", data.weights, data.values)

        def hat_int(mask):
            return np.bincount(cells[mask].ravel(), hat[mask].ravel(), minlength=nv)

        all_cells = np.ones(ne, dtype=bool)
        return cls(
            mesh, fiber, parent, data, matrix_cells, disk, sub, n_free, fiber_section_constraints(fiber),
            load_map, hat_int(all_cells), hat_int(~matrix_cells), hat_int(matrix_cells),
            float(data.weights[~matrix_cells].sum()), float(data.weights.sum()),
        )

    @property
    def n_quad(self) -> int:
        return self.data.weights.size

    def points_at(self, macro_x: np.ndarray) -> EvaluationPoints:
        return _cell_points(self.data, macro_x, self.mesh.cell_region)

    def load_values(self, f: LoadField, macro_x: np.ndarray) -> np.ndarray:
        """Load vectors ``(n_points, n_quad, 3)`` at the cell quadrature points of each macro point."""
        X = np.atleast_2d(np.asarray(macro_x, dtype=float))
        nqd = self.n_quad
        out = np.zeros((len(X), nqd, 3))
        if f.is_zero:
            return out
        y = self.data.points.reshape(-1, 2)
        region = np.repeat(self.mesh.cell_region[self.data.cells], self.data.weights.shape[1])
        batch = max(1, 2_000_000 // nqd)
        for s in range(0, len(X), batch):
            xb = X[s:s + batch]
            pts = EvaluationPoints(np.repeat(xb, nqd, axis=0), np.tile(region, len(xb)), np.tile(y, (len(xb), 1)))
            out[s:s + batch] = f.evaluate(pts).reshape(len(xb), nqd, 3)
        return out

    def p_full(self, p_free: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Nodal ``p`` fields ``(n, nv, 3)`` from free DOFs ``(n, n_free)`` and ``g`` ``(n, 7)``."""
        red = np.hstack([np.atleast_2d(p_free), np.atleast_2d(g)])
        full = (self.substitution.S @ red.T).T
        return full[:, : 3 * self.mesh.n_vertices].reshape(len(red), -1, 3)


# ----------------------------------------------------------------------------
# per-point cell operators


@dataclass(frozen=True, eq=False)
class CellOperator:
    """Cell matrices at one macro point and their condensation onto ``g`` and ``h``.

    ``reduced`` is the matrix-part energy on ``[p_free; g]``; ``Q`` its
    Schur complement on ``g``; ``X`` the free ``p`` response to unit ``g``;
    ``fiber`` the condensed disk stiffness on ``h``.
    """

    cell: HomCell
    macro_x: np.ndarray
    reduced: sp.csr_matrix
    Kff: sp.csr_matrix
    Kfg: np.ndarray
    Kgg: np.ndarray
    factor: SPDFactor
    X: np.ndarray
    Q: np.ndarray
    fiber: CrossSectionStiffness

    @classmethod
    def build(cls, cell: HomCell, C: ElasticityTensorField, macro_x: np.ndarray) -> "CellOperator":
        mesh, data = cell.mesh, cell.data
        nv = mesh.n_vertices
        macro_x = np.asarray(macro_x, dtype=float)
        D = _tensor_at(C, data, 0.0, mesh.cell_region, macro_x)
        w = data.weights * cell.matrix_cells[:, None]
        B = operators.section_B(data.grads)
        G = operators.macro_matrix_G(w.shape)
        asm = MatrixAssembler(mesh.cells, nv, 3)
        asm.add(data.cells, element_stiffness(B, D, w))
        edofs = vector_dofs(mesh.cells[data.cells])
        Kpg = scatter_rows(edofs, element_coupling(B, D, G, w), 3 * nv)
        Kgg = np.einsum("eq,eqki,eqkl,eqlj->ij", w, G, D, G)
        full = sp.bmat([[asm.matrix(), sp.csr_matrix(Kpg)], [sp.csr_matrix(Kpg.T), sp.csr_matrix(Kgg)]]).tocsr()
        red = cell.substitution.reduce_matrix(full)
        nf = cell.n_free
        Kff = red[:nf, :nf].tocsc()
        Kfg = red[:nf, nf:].toarray()
        Kgg_r = red[nf:, nf:].toarray()
        try:
            fac = SPDFactor(Kff)
        except SolverError as exc:
            raise SolverError(f"cell matrix problem is singular: {exc}") from exc
        X, _ = fac.solve(-Kfg, tol=1e-12)
        Q = Kgg_r + Kfg.T @ X
        fib = condense_section(C, cell.fiber, 0.0, cell.fiber_substitution, macro_x)
        return cls(cell, macro_x, red, Kff, Kfg, Kgg_r, fac, X, 0.5 * (Q + Q.T), fib)

    def load_response(self, q3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Free ``p`` response with ``g = 0`` and the condensed load on ``g``.

        ``q3`` are axial load values ``(n_quad, m)``; returns ``(n_free, m)``
        and ``(7, m)``.
        """
        Fr = self.cell.load_map @ q3
        nf = self.cell.n_free
        Ff, Fg = Fr[:nf], Fr[nf:]
        if not np.any(Ff):
            P = np.zeros_like(Ff)
        else:
            P, _ = self.factor.solve(Ff, tol=1e-12)
        return P, Fg + self.X.T @ Ff


def _operator_provider(cell: HomCell, C: ElasticityTensorField) -> Callable[[np.ndarray], CellOperator]:
    cache: dict[tuple, CellOperator] = {}
    uniform = not C.depends_on_x

    def at(x: np.ndarray) -> CellOperator:
        key = (0.0, 0.0, 0.0) if uniform else tuple(np.asarray(x, dtype=float).tolist())
        op = cache.get(key)
        if op is None:
            op = CellOperator.build(cell, C, np.asarray(key))
            cache[key] = op
        return op

    at.uniform = uniform  # type: ignore[attr-defined]
    return at


# ----------------------------------------------------------------------------
# macro discretization


@dataclass(frozen=True)
class MacroGrid:
    """Tensor grid on ``(-ell, ell)^2 x (0, ell)``.

    Unknown blocks: ``u1, u2`` (P1 x P1 x Hermite, two DOFs per ``x3``
    node), then ``theta`` and ``abar`` (P1 x P1 x P1). Plane nodes are
    numbered ``i * (n_xy + 1) + j``.
    """

    ell: float
    n_xy: int
    n_z: int

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(-self.ell, self.ell, self.n_xy + 1)

    @property
    def z_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.ell, self.n_z + 1)

    @property
    def n_plane(self) -> int:
        return (self.n_xy + 1) ** 2

    @property
    def offsets(self) -> tuple[int, int, int, int]:
        P, nz = self.n_plane, self.n_z + 1
        return 0, 2 * P * nz, 4 * P * nz, 5 * P * nz

    @property
    def size(self) -> int:
        return 6 * self.n_plane * (self.n_z + 1)

    def clamped(self) -> np.ndarray:
        P, nz = self.n_plane, self.n_z + 1
        o1, o2, o3, o4 = self.offsets
        p = np.arange(P)
        ends = []
        for o in (o1, o2):
            for m in (0, 1, 2 * (nz - 1), 2 * (nz - 1) + 1):
                ends.append(o + p * 2 * nz + m)
        for o in (o3, o4):
            for m in (0, nz - 1):
                ends.append(o + p * nz + m)
        return np.sort(np.concatenate(ends))

    def locate(self, points: np.ndarray):
        """Element indices ``(i, j, k)`` and local coordinates of 3D points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        hx = 2 * self.ell / self.n_xy
        hz = self.ell / self.n_z
        i = np.clip(np.floor((p[:, 0] + self.ell) / hx).astype(np.int64), 0, self.n_xy - 1)
        j = np.clip(np.floor((p[:, 1] + self.ell) / hx).astype(np.int64), 0, self.n_xy - 1)
        k = np.clip(np.floor(p[:, 2] / hz).astype(np.int64), 0, self.n_z - 1)
        xn, zn = self.x_nodes, self.z_nodes
        s1 = (p[:, 0] - xn[i]) / hx
        s2 = (p[:, 1] - xn[j]) / hx
        s3 = (p[:, 2] - zn[k]) / hz
        return i, j, k, s1, s2, s3

    def basis(self, points: np.ndarray):
        """Element DOFs ``(n, 48)`` and the maps to values, ``g`` and ``h`` at the points.

        Local order: ``u1`` (16), ``u2`` (16), ``theta`` (8), ``abar`` (8);
        within a block the four plane corners ``(0,0), (0,1), (1,0), (1,1)``
        each carry their ``x3`` DOFs.
        """
        i, j, k, s1, s2, s3 = self.locate(points)
        n = len(i)
        hx = 2 * self.ell / self.n_xy
        hz = self.ell / self.n_z
        nz = self.n_z + 1
        phi1 = np.stack([1 - s1, s1], axis=1)
        phi2 = np.stack([1 - s2, s2], axis=1)
        dphi = np.array([-1.0, 1.0]) / hx
        H, H1, H2 = hermite_basis(s3, np.full(n, hz))
        L = np.stack([1 - s3, s3], axis=1)
        L1 = np.broadcast_to(np.array([-1.0, 1.0]) / hz, (n, 2))
        o1, o2, o3, o4 = self.offsets
        edofs = np.zeros((n, 48), dtype=np.int64)
        Nv = np.zeros((n, 3, 48))
        Bg = np.zeros((n, N_MACRO, 48))
        Bh = np.zeros((n, N_FIBER, 48))
        for c, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            p = (i + a) * (self.n_xy + 1) + (j + b)
            pa, pb = phi1[:, a], phi2[:, b]
            da, db = dphi[a], dphi[b]
            for m in range(4):
                herm = 2 * k + m
                for comp, off in ((0, o1), (1, o2)):
                    col = 16 * comp + 4 * c + m
                    edofs[:, col] = off + p * 2 * nz + herm
                    Nv[:, comp, col] = pa * pb * H[:, m]
                    Bg[:, 2 * comp, col] = da * pb * H[:, m]
                    Bg[:, 2 * comp + 1, col] = pa * db * H[:, m]
                    Bg[:, 4 + comp, col] = pa * pb * H1[:, m]
                    Bh[:, 1 + comp, col] = pa * pb * H2[:, m]
            for m in range(2):
                col_t = 32 + 2 * c + m
                col_a = 40 + 2 * c + m
                edofs[:, col_t] = o3 + p * nz + k + m
                edofs[:, col_a] = o4 + p * nz + k + m
                Bg[:, 6, col_t] = pa * pb * L[:, m]
                Bh[:, 3, col_t] = pa * pb * L1[:, m]
                Nv[:, 2, col_a] = pa * pb * L[:, m]
                Bh[:, 0, col_a] = pa * pb * L1[:, m]
        return edofs, Nv, Bg, Bh

    def quadrature(self, n_xy: int = 3, n_z: int = 4) -> tuple[np.ndarray, np.ndarray]:
        """Tensor Gauss points ``(n, 3)`` and weights, element by element."""
        gx, gz = quadrature.gauss_line(n_xy), quadrature.gauss_line(n_z)
        hx = 2 * self.ell / self.n_xy
        hz = self.ell / self.n_z
        xn, zn = self.x_nodes[:-1], self.z_nodes[:-1]
        pts, wts = [], []
        for i in range(self.n_xy):
            for j in range(self.n_xy):
                for k in range(self.n_z):
                    X1 = xn[i] + hx * gx.points[:, 0]
                    X2 = xn[j] + hx * gx.points[:, 0]
                    X3 = zn[k] + hz * gz.points[:, 0]
                    P = np.stack(np.meshgrid(X1, X2, X3, indexing="ij"), axis=-1).reshape(-1, 3)
                    W = np.einsum("a,b,c->abc", gx.weights, gx.weights, gz.weights).ravel() * hx * hx * hz
                    pts.append(P)
                    wts.append(W)
        return np.vstack(pts), np.concatenate(wts)

    def nodes(self) -> np.ndarray:
        """All grid nodes ``(n, 3)`` ordered ``x1``, ``x2``, ``x3`` (last fastest)."""
        X1, X2, X3 = np.meshgrid(self.x_nodes, self.x_nodes, self.z_nodes, indexing="ij")
        return np.column_stack([X1.ravel(), X2.ravel(), X3.ravel()])


# ----------------------------------------------------------------------------
# limit solution


@dataclass(frozen=True, eq=False)
class HomLimitSolution:
    """Macro DOFs plus the cell machinery that reconstructs the cell fields at any ``x``."""

    grid: MacroGrid
    dofs: np.ndarray
    cell: HomCell
    operator_at: Callable[[np.ndarray], CellOperator]
    tensor: ElasticityTensorField
    load: LoadField
    quad_points: np.ndarray
    quad_weights: np.ndarray
    energy: float
    load_work: float
    method: str = "condensed"
    metadata: dict = field(default_factory=dict)

    def _local(self, points):
        edofs, Nv, Bg, Bh = self.grid.basis(points)
        ue = self.dofs[edofs]
        return (np.einsum("nkd,nd->nk", Nv, ue), np.einsum("nkd,nd->nk", Bg, ue),
                np.einsum("nkd,nd->nk", Bh, ue))

    def macro_fields(self, points) -> dict[str, np.ndarray]:
        """``u1, u2, abar`` values, ``g`` ``(n, 7)`` and ``h`` ``(n, 4)`` at 3D points."""
        v, g, h = self._local(points)
        return {"u1": v[:, 0], "u2": v[:, 1], "abar": v[:, 2], "theta": g[:, 6], "g": g, "h": h}

    def cell_state(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(abar, g, h, p)`` with ``p`` the nodal matrix-cell fields ``(n, nv, 3)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        v, g, h = self._local(points)
        q = self.cell.load_values(self.load, points)[:, :, 2]
        p = np.zeros((len(points), self.cell.mesh.n_vertices, 3))
        for idx, op in _group_points(points, self.operator_at):
            P, _ = op.load_response(q[idx].T)
            pf = P.T + g[idx] @ op.X.T
            p[idx] = self.cell.p_full(pf, g[idx])
        return v[:, 2], g, h, p

    def u3_cell(self, points) -> np.ndarray:
        """Nodal ``u3(x, .)`` on the cell mesh, shape ``(n, nv)``."""
        abar, _, _, p = self.cell_state(points)
        return abar[:, None] + p[:, :, 2]

    def mean_D_u3(self, points) -> np.ndarray:
        u3 = self.u3_cell(points)
        return u3 @ self.cell.int_D / self.cell.area_D

    def U(self, points) -> np.ndarray:
        """``(1/|Y|) int_Y u3(x, y) dy``."""
        return self.u3_cell(points) @ self.cell.int_Y / self.cell.area_Y

    def fiber_correctors(self, points) -> np.ndarray:
        """Nodal ``(w1, w2, v3)`` on the disk mesh, shape ``(n, nv_D, 3)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        _, _, h = self._local(points)
        out = np.zeros((len(points), self.cell.fiber.n_vertices, 3))
        for idx, op in _group_points(points, self.operator_at):
            out[idx] = np.einsum("vck,nk->nvc", op.fiber.generators, h[idx])
        return out

    def pairing(self, phi, component: int = 2) -> float:
        """``int_Omega int_Y u_c(x, y) phi(x, y)`` on the solution quadrature (``u3`` only)."""
        if component != 2:
            raise ValueError("cell pairing is implemented for the axial component")
        cell = self.cell
        d = cell.data
        cells = cell.mesh.cells[d.cells]
        total = 0.0
        batch = max(1, 400_000 // cell.n_quad)
        for s in range(0, len(self.quad_points), batch):
            X = self.quad_points[s:s + batch]
            u3 = self.u3_cell(X)  # (b, nv)
            uq = np.einsum("qa,bea->beq", d.values, u3[:, cells])
            nqd = cell.n_quad
            region = np.repeat(cell.mesh.cell_region[d.cells], d.weights.shape[1])
            pts = EvaluationPoints(np.repeat(X, nqd, axis=0), np.tile(region, len(X)),
                                   np.tile(d.points.reshape(-1, 2), (len(X), 1)))
            ph = _eval_scalar(phi, pts).reshape(len(X), *d.weights.shape)
            total += float(np.einsum("b,eq,beq,beq->", self.quad_weights[s:s + batch], d.weights, uq, ph))
        return total

    def fiber_volume(self) -> float:
        """``int_Omega int_Y chi_D = |D_h| |Omega|`` on the macro quadrature."""
        return float(self.quad_weights.sum()) * self.cell.area_D


def _group_points(points: np.ndarray, operator_at) -> list[tuple[np.ndarray, CellOperator]]:
    if getattr(operator_at, "uniform", False):
        return [(np.arange(len(points)), operator_at(points[0] if len(points) else np.zeros(3)))]
    return [(np.array([i]), operator_at(points[i])) for i in range(len(points))]


# ----------------------------------------------------------------------------
# drivers


def _prepare_limit(C, f, ell, macro, cell, cell_n):
    if f.mode != "hom":
        raise ValueError("homogenization limit needs a hom-mode load")
    if cell is None:
        raise ValueError("a cell mesh is required")
    if not isinstance(cell, HomCell):
        cell = HomCell.build(cell)
    require_admissible(C, cell.points_at(np.zeros(3)))
    grid = MacroGrid(float(ell), int(macro[0]), int(macro[1]))
    return grid, cell


def _macro_loads(cell: HomCell, f: LoadField, X: np.ndarray) -> np.ndarray:
    """``int_Y f`` at the macro points, ``(n, 3)``."""
    vals = cell.load_values(f, X)
    return np.einsum("q,nqc->nc", cell.data.weights.ravel(), vals)


def solve_hom_limit(
    C: ElasticityTensorField, f: LoadField, ell: float = 0.5, macro: tuple[int, int] = (4, 8),
    cell: RegionTaggedMesh | HomCell | None = None, r: float = 0.3, cell_n: int = 16,
    n_gauss: tuple[int, int] = (3, 4),
) -> HomLimitSolution:
    """Condensed solve: per-point cell stiffness ``(Q_m, Q_f)`` and loads, then the macro system.

    ``macro = (n_xy, n_z)`` elements; ``cell`` defaults to the periodic
    cell mesh with ``cell_n`` boundary segments per side and radius ``r``.
    """
    cell = cell if cell is not None else build_cell_mesh(r, n_side=cell_n)
    grid, cell = _prepare_limit(C, f, ell, macro, cell, cell_n)
    at = _operator_provider(cell, C)
    X, W = grid.quadrature(*n_gauss)
    edofs, Nv, Bg, Bh = grid.basis(X)
    n = len(X)
    Qm = np.zeros((n, N_MACRO, N_MACRO))
    Qf = np.zeros((n, N_FIBER, N_FIBER))
    Lg = np.zeros((n, N_MACRO))
    q = cell.load_values(f, X)
    fY = np.einsum("q,nqc->nc", cell.data.weights.ravel(), q)
    for idx, op in _group_points(X, at):
        Qm[idx] = op.Q
        Qf[idx] = op.fiber.Q
        if np.any(q[idx, :, 2]):
            _, L = op.load_response(q[idx, :, 2].T)
            Lg[idx] = L.T
    Ke = np.einsum("n,nki,nkl,nlj->nij", W, Bg, Qm, Bg) + np.einsum("n,nki,nkl,nlj->nij", W, Bh, Qf, Bh)
    Fe = np.einsum("n,nki,nk->ni", W, Nv, fY) + np.einsum("n,nki,nk->ni", W, Bg, Lg)
    N = grid.size
    K = sp.csr_matrix(
        (Ke.ravel(), (np.repeat(edofs, 48, axis=1).ravel(), np.tile(edofs, (1, 48)).ravel())), shape=(N, N)
    )
    F = np.bincount(edofs.ravel(), Fe.ravel(), minlength=N)
    free = np.setdiff1d(np.arange(N), grid.clamped())
    Kr = K[free][:, free].tocsc()
    Fr = F[free]
    dofs = np.zeros(N)
    if np.any(Fr):
        dofs[free], _ = SPDFactor(Kr).solve(Fr, tol=1e-12)
    sol = HomLimitSolution(grid, dofs, cell, at, C, f, X, W, 0.0, 0.0, "condensed",
                           {"macro": tuple(macro), "n_gauss": tuple(n_gauss), "unknowns": int(len(free)),
                            "macro_energy": float(dofs @ (K @ dofs)), "macro_load_work": float(F @ dofs)})
    energy, work = limit_energy(sol)
    return _with_energy(sol, energy, work)


def _with_energy(sol: HomLimitSolution, energy: float, work: float) -> HomLimitSolution:
    return HomLimitSolution(sol.grid, sol.dofs, sol.cell, sol.operator_at, sol.tensor, sol.load, sol.quad_points,
                            sol.quad_weights, energy, work, sol.method, sol.metadata)


def limit_energy(sol: HomLimitSolution) -> tuple[float, float]:
    """Uncondensed energy ``a(u, u)`` and load work of the reconstructed fields on the solution quadrature.

    Fiber part ``h . Q0 h + 2 v . Cr h + v . K v`` with the disk correctors;
    matrix part ``[p; g] . K_cell [p; g]``.
    """
    X, W = sol.quad_points, sol.quad_weights
    v, g, h = sol._local(X)
    q = sol.cell.load_values(sol.load, X)
    fY = np.einsum("q,nqc->nc", sol.cell.data.weights.ravel(), q)
    energy = 0.0
    work = float(np.einsum("n,nc,nc->", W, fY, v))
    nf = sol.cell.n_free
    for idx, op in _group_points(X, sol.operator_at):
        P, _ = op.load_response(q[idx, :, 2].T) if np.any(q[idx, :, 2]) else (np.zeros((nf, len(idx))), None)
        pf = P + op.X @ g[idx].T  # (nf, m)
        red = np.vstack([pf, g[idx].T])
        Fr = sol.cell.load_map @ q[idx, :, 2].T
        energy += float(W[idx] @ np.einsum("im,im->m", red, op.reduced @ red))
        work += float(W[idx] @ np.einsum("im,im->m", red, Fr))
        fib = op.fiber
        # reduced disk generators from the nodal ones (S has full column rank)
        gen_red = np.linalg.lstsq(fib.substitution.S.toarray(), fib.generators.reshape(-1, N_FIBER), rcond=None)[0]
        vv = gen_red @ h[idx].T  # (n_red, m)
        e_f = (np.einsum("km,kl,lm->m", h[idx].T, fib.uncondensed, h[idx].T)
               + 2 * np.einsum("im,ik,km->m", vv, fib.coupling, h[idx].T)
               + np.einsum("im,im->m", vv, fib.reduced_matrix @ vv))
        energy += float(W[idx] @ e_f)
    return energy, work


def solve_hom_limit_monolithic(
    C: ElasticityTensorField, f: LoadField, ell: float = 0.5, macro: tuple[int, int] = (1, 2),
    cell: RegionTaggedMesh | HomCell | None = None, r: float = 0.3, cell_n: int = 8,
    n_gauss: tuple[int, int] = (2, 2),
) -> HomLimitSolution:
    """One sparse system: macro DOFs, and per macro quadrature point the free matrix-cell DOFs and disk DOFs."""
    cell = cell if cell is not None else build_cell_mesh(r, n_side=cell_n)
    grid, cell = _prepare_limit(C, f, ell, macro, cell, cell_n)
    at = _operator_provider(cell, C)
    X, W = grid.quadrature(*n_gauss)
    edofs, Nv, Bg, Bh = grid.basis(X)
    n = len(X)
    nf = cell.n_free
    nd = cell.fiber_substitution.n_reduced
    N = grid.size
    per = nf + nd
    total = N + n * per
    q = cell.load_values(f, X)
    fY = np.einsum("q,nqc->nc", cell.data.weights.ravel(), q)
    rows, cols, vals = [], [], []

    def add(r_, c_, v_):
        rows.append(np.asarray(r_).ravel())
        cols.append(np.asarray(c_).ravel())
        vals.append(np.asarray(v_).ravel())

    F = np.zeros(total)
    fib_ops: dict[int, tuple] = {}
    for i in range(n):
        op = at(X[i])
        key = id(op)
        if key not in fib_ops:
            K, Cg, Q0 = section_operators(C, cell.fiber, 0.0, np.asarray(op.macro_x))
            sub = cell.fiber_substitution
            fib_ops[key] = (sub.reduce_matrix(K).tocoo(), sub.S.T @ Cg, Q0, op.Kff.tocoo())
        Kd, Cd, Q0, Kff = fib_ops[key]
        w = W[i]
        dofs = edofs[i]
        base_p = N + i * per
        base_d = base_p + nf
        # macro-macro
        add(np.repeat(dofs, 48), np.tile(dofs, 48), w * (Bg[i].T @ op.Kgg @ Bg[i] + Bh[i].T @ Q0 @ Bh[i]))
        # matrix cell
        add(Kff.row + base_p, Kff.col + base_p, w * Kff.data)
        cross = w * (op.Kfg @ Bg[i])  # (nf, 48)
        rr = np.arange(nf)[:, None] + base_p
        add(np.broadcast_to(rr, cross.shape), np.broadcast_to(dofs, cross.shape), cross)
        add(np.broadcast_to(dofs, cross.shape), np.broadcast_to(rr, cross.shape), cross)
        # disk
        add(Kd.row + base_d, Kd.col + base_d, w * Kd.data)
        crossd = w * (Cd @ Bh[i])
        rd = np.arange(nd)[:, None] + base_d
        add(np.broadcast_to(rd, crossd.shape), np.broadcast_to(dofs, crossd.shape), crossd)
        add(np.broadcast_to(dofs, crossd.shape), np.broadcast_to(rd, crossd.shape), crossd)
        # loads
        Fr = cell.load_map @ q[i, :, 2]
        F[base_p:base_p + nf] += w * Fr[:nf]
        np.add.at(F, dofs, w * (Nv[i].T @ fY[i] + Bg[i].T @ Fr[nf:]))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(total, total))
    free = np.setdiff1d(np.arange(total), grid.clamped())
    Ar = A[free][:, free].tocsc()
    Fr_all = F[free]
    x = np.zeros(total)
    if np.any(Fr_all):
        x[free], _ = SPDFactor(Ar).solve(Fr_all, tol=1e-12)
    cell_fields = x[N:].reshape(n, per)
    sol = HomLimitSolution(
        grid, x[:N].copy(), cell, at, C, f, X, W, float(x @ (A @ x)), float(F @ x), "monolithic",
        {"macro": tuple(macro), "n_gauss": tuple(n_gauss), "unknowns": int(len(free)),
         "matrix_cell_free": cell_fields[:, :nf], "disk_reduced": cell_fields[:, nf:]},
    )
    return sol


# ----------------------------------------------------------------------------
# cell correctors and the nonlocal decomposition


class CellCorrectorSolver:
    """Periodic problems on ``Y \\ D`` with every disk vertex fixed, loaded on the axial component.

    Assembled independently of :class:`CellOperator` (different constraint
    set, no macro unknowns).
    """

    def __init__(self, C: ElasticityTensorField, cell: RegionTaggedMesh, macro_x: np.ndarray):
        self.cell = cell
        self.macro_x = np.asarray(macro_x, dtype=float)
        nv = cell.n_vertices
        data = element_data(cell, rule=_cell_rule())
        self.data = data
        self.matrix_cells = cell.cell_region[data.cells] == MATRIX
        disk = np.unique(cell.cells[cell.cell_region == FIBER])
        cs = ConstraintSet(3 * nv).fix((3 * disk[:, None] + np.arange(3)).ravel())
        for pairs in cell.periodic_pairs.values():
            for c in range(3):
                cs.identify(3 * pairs[:, 0] + c, 3 * pairs[:, 1] + c)
        self.substitution = cs.build()
        D = _tensor_at(C, data, 0.0, cell.cell_region, self.macro_x)
        w = data.weights * self.matrix_cells[:, None]
        asm = MatrixAssembler(cell.cells, nv, 3)
        asm.add(data.cells, element_stiffness(operators.section_B(data.grads), D, w))
        self.factor = SPDFactor(self.substitution.reduce_matrix(asm.matrix()))

    def matrix_weights(self) -> np.ndarray:
        return self.data.weights * self.matrix_cells[:, None]

    def solve_axial(self, q: np.ndarray) -> np.ndarray:
        """Nodal fields ``(m, nv, 3)`` for axial load values ``q`` of shape ``(m, ne, nq)`` on ``Y \\ D``."""
        d = self.data
        w = self.matrix_weights()
        nv = self.cell.n_vertices
        cells = self.cell.cells[d.cells]
        Fe = np.einsum("eq,qa,meq->mea", w, d.values, q)
        F = np.zeros((len(q), 3 * nv))
        for m in range(len(q)):
            F[m, 2::3] = np.bincount(cells.ravel(), Fe[m].ravel(), minlength=nv)
        rhs = self.substitution.S.T @ F.T
        if not np.any(rhs):
            return np.zeros((len(q), nv, 3))
        X, _ = self.factor.solve(rhs, tol=1e-12)
        return (self.substitution.S @ X).T.reshape(len(q), nv, 3)

    def integrate_axial(self, nodal: np.ndarray) -> np.ndarray:
        d = self.data
        z = np.asarray(nodal)[..., 2][:, self.cell.cells[d.cells]]
        return np.einsum("eq,qa,mea->m", self.matrix_weights(), d.values, z)


def solve_cell_z0(C: ElasticityTensorField, cell: RegionTaggedMesh, macro_x=(0.0, 0.0, 0.0),
                  solver: CellCorrectorSolver | None = None) -> tuple[np.ndarray, float]:
    """Unit axial load on ``Y \\ D``; returns the nodal field and ``m0 = int_{Y \\ D} z0_3``."""
    solver = solver or CellCorrectorSolver(C, cell, np.asarray(macro_x, dtype=float))
    ne, nq = solver.data.weights.shape
    z = solver.solve_axial(np.ones((1, ne, nq)))
    return z[0], float(solver.integrate_axial(z)[0])


def matrix_mean_f3_cell(solver: CellCorrectorSolver, f: LoadField, macro_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Axial load values ``(m, ne, nq)`` on the cell and their ``Y \\ D`` averages at each macro point."""
    X = np.atleast_2d(np.asarray(macro_x, dtype=float))
    d = solver.data
    ne, nq = d.weights.shape
    w = solver.matrix_weights()
    vals = np.zeros((len(X), ne, nq))
    if not f.is_zero:
        for i, x in enumerate(X):
            vals[i] = f.component(2, _cell_points(d, x, solver.cell.cell_region)).reshape(ne, nq)
    return vals, np.einsum("eq,meq->m", w, vals) / w.sum()


def solve_cell_z00(C: ElasticityTensorField, f: LoadField, cell: RegionTaggedMesh, macro_x,
                   solver: CellCorrectorSolver | None = None) -> np.ndarray:
    """Fields for the load ``f3(x, .) - mean_{Y \\ D} f3(x, .)`` at each macro point, ``(m, nv, 3)``."""
    X = np.atleast_2d(np.asarray(macro_x, dtype=float))
    solver = solver or CellCorrectorSolver(C, cell, X[0])
    vals, mean = matrix_mean_f3_cell(solver, f, X)
    return solver.solve_axial(vals - mean[:, None, None])


@dataclass(frozen=True, eq=False)
class HomNonlocalDecomposition:
    points: np.ndarray
    z0: np.ndarray
    z00: np.ndarray
    m0: np.ndarray
    m00: np.ndarray
    U: np.ndarray
    mean_D_u3: np.ndarray
    mean_f3_matrix: np.ndarray
    load_scale: float = 0.0

    @property
    def reconstructed_U(self) -> np.ndarray:
        return self.mean_D_u3 + self.m0 * self.mean_f3_matrix + self.m00

    @property
    def identity_residual(self) -> float:
        """Relative to the largest term, floored by ``m0`` times the cell mean of ``|f3|``."""
        terms = (self.U, self.mean_D_u3, self.m0 * self.mean_f3_matrix, self.m00)
        scale = max(max(float(np.abs(t).max(initial=0.0)) for t in terms), self.load_scale, np.finfo(float).tiny)
        return float(np.abs(self.reconstructed_U - self.U).max(initial=0.0)) / scale


def decompose_U_hom(
    limit: HomLimitSolution, points: np.ndarray | None = None, cell: RegionTaggedMesh | None = None,
) -> HomNonlocalDecomposition:
    """Both sides of the decomposition at macro points (default: the macro grid nodes).

    ``cell`` must be the cell mesh of the limit solution.
    """
    X = limit.grid.nodes() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    mesh = limit.cell.mesh
    if cell is not None and not (
        cell.points.shape == mesh.points.shape and np.array_equal(cell.points, mesh.points)
        and cell.cells.shape == mesh.cells.shape and np.array_equal(cell.cells, mesh.cells)
    ):
        raise ValueError("cell mesh does not match the limit cell discretization")
    C, f = limit.tensor, limit.load
    uniform = not C.depends_on_x
    solvers: dict[tuple, CellCorrectorSolver] = {}

    def solver_at(x):
        key = (0.0, 0.0, 0.0) if uniform else tuple(np.asarray(x, dtype=float).tolist())
        if key not in solvers:
            solvers[key] = CellCorrectorSolver(C, mesh, np.asarray(key))
        return solvers[key]

    n = len(X)
    nv = mesh.n_vertices
    z0 = np.zeros((1 if uniform else n, nv, 3))
    m0 = np.zeros(n)
    z00 = np.zeros((n, nv, 3))
    mean_f = np.zeros(n)
    mean_abs = np.zeros(n)
    for i, x in enumerate(X):
        s = solver_at(x)
        if uniform and i > 0:
            m0[i] = m0[0]
        else:
            z, m = solve_cell_z0(C, mesh, x, s)
            z0[0 if uniform else i] = z
            m0[i] = m
        vals, mean = matrix_mean_f3_cell(s, f, x)
        mean_f[i] = mean[0]
        w = s.matrix_weights()
        mean_abs[i] = float((w * np.abs(vals[0])).sum() / w.sum())
        z00[i] = s.solve_axial(vals - mean[:, None, None])[0]
    m00 = np.array([float(solver_at(x).integrate_axial(z00[i:i + 1])[0]) for i, x in enumerate(X)])
    u3 = limit.u3_cell(X)
    U = u3 @ limit.cell.int_Y / limit.cell.area_Y
    mean_D = u3 @ limit.cell.int_D / limit.cell.area_D
    scale = float(np.max(np.abs(m0) * mean_abs, initial=0.0))
    return HomNonlocalDecomposition(X, z0, z00, m0, m00, U, mean_D, mean_f, scale)
