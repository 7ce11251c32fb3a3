"""The ε-family of 3D fibered-rod problems on the fixed domain.

The rod of cross-section ``eps * omega`` is mapped to the fixed domain
``omega x (0, length)``; there the energy is
``int (chi_F + eps^2 chi_M) C E^eps u . E^eps v`` with the scaled strain
``E^eps`` and both end faces clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from fibrod.fem import operators
from fibrod.fem.assembly import (
    MatrixAssembler, element_load, element_stiffness, scatter_vector, vector_dofs,
)
from fibrod.fem.elements import ElementData, cell_y_points, iter_element_data, triangle_geometry
from fibrod.fem.norms import norm
from fibrod.fem.solver import SolveInfo, rigid_body_modes, solve_spd
from fibrod.fem.spaces import FieldHandle, SparseSystem, SpaceDescriptor, clamped_space, interpolate_nodal
from fibrod.fem import quadrature
from fibrod.loads import LoadField
from fibrod.mesh import RegionTaggedMesh
from fibrod.tensors import (
    FIBER, MATRIX, ElasticityTensorField, EvaluationPoints, require_admissible, to_mandel,
    MandelMatrix,
)

CHUNK = 4096


def _points(mesh: RegionTaggedMesh, data: ElementData) -> EvaluationPoints:
    ne, nq, _ = data.points.shape
    region = np.repeat(mesh.cell_region[data.cells], nq)
    y = cell_y_points(mesh, data)
    return EvaluationPoints(data.points.reshape(-1, 3), region, None if y is None else y.reshape(-1, 2))


def check_tensor_on_mesh(mesh: RegionTaggedMesh, C: ElasticityTensorField) -> None:
    """Refuse inadmissible tensors: constant blocks once, expression blocks at every quadrature point."""
    if C.is_regionwise_constant:
        x = np.zeros((2, 3))
        y = np.zeros((2, 2)) if C.periodic else None
        require_admissible(C, EvaluationPoints(x, np.array([FIBER, MATRIX]), y))
        return
    for data in iter_element_data(mesh, CHUNK):
        require_admissible(C, _points(mesh, data))


def assemble_energy(
    mesh: RegionTaggedMesh,
    C: ElasticityTensorField,
    scales: np.ndarray,
    region_weights: dict[int, float],
    check: bool = True,
) -> sp.csr_matrix:
    """Full (unconstrained) matrix of ``int weight * C (B u) . (B v)`` for a scaled strain.

    ``scales`` are the Mandel row factors (see :func:`operators.strain_scales`).
    """
    if check:
        check_tensor_on_mesh(mesh, C)
    asm = MatrixAssembler(mesh.cells, mesh.n_vertices, 3)
    constant = C.is_regionwise_constant
    for data in iter_element_data(mesh, CHUNK):
        reg = mesh.cell_region[data.cells]
        wreg = np.where(reg == FIBER, region_weights[FIBER], region_weights[MATRIX])
        if not np.any(wreg):
            continue
        B = operators.strain_B(data.grads, scales)
        ne, nq = data.weights.shape
        if constant:
            D = np.where((reg == FIBER)[:, None, None], C.region_matrix(FIBER), C.region_matrix(MATRIX))
            D = np.broadcast_to(D[:, None], (ne, nq, 6, 6))
        else:
            D = C.evaluate(_points(mesh, data)).reshape(ne, nq, 6, 6)
        Ke = element_stiffness(B, D, data.weights * wreg[:, None])
        asm.add(data.cells, Ke)
    return asm.matrix()


def assemble_load(
    mesh: RegionTaggedMesh,
    f: LoadField,
    scaling: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> np.ndarray:
    """Full load vector ``F[3a + k] = int scaling_k f_k N_a``."""
    n = 3 * mesh.n_vertices
    F = np.zeros(n)
    if f.is_zero:
        return F
    sc = np.asarray(scaling, dtype=float)
    for data in iter_element_data(mesh, CHUNK):
        ne, nq = data.weights.shape
        vals = f.evaluate(_points(mesh, data)).reshape(ne, nq, 3) * sc
        Fe = element_load(data.values, vals, data.weights)
        F += scatter_vector(vector_dofs(mesh.cells[data.cells]), Fe, n)
    return F


def rod_region_weights(eps: float, matrix_weight: float | None = None) -> dict[int, float]:
    return {FIBER: 1.0, MATRIX: eps ** 2 if matrix_weight is None else matrix_weight}


@dataclass(frozen=True, eq=False)
class RodMicroSolution:
    """Solution of one ε problem; ``energy`` is ``F_eps(u) = a(u, u)``."""

    eps: float
    u: FieldHandle
    energy: float
    load_work: float
    residual: float
    solve_info: SolveInfo
    tensor: ElasticityTensorField
    load: LoadField
    region_weights: dict[int, float] = field(default_factory=dict)

    @property
    def mesh(self) -> RegionTaggedMesh:
        return self.u.space.mesh

    def nodal(self) -> np.ndarray:
        return self.u.nodal()

    @property
    def galerkin_defect(self) -> float:
        scale = max(abs(self.load_work), abs(self.energy), np.finfo(float).tiny)
        return abs(self.energy - self.load_work) / scale


def build_rod_system(
    mesh: RegionTaggedMesh, C: ElasticityTensorField, f: LoadField, eps: float,
    matrix_weight: float | None = None,
) -> tuple[SpaceDescriptor, SparseSystem, np.ndarray]:
    if not eps > 0:
        raise ValueError("eps must be positive")
    if f.mode != "rod":
        raise ValueError("rod problems need a rod-mode load")
    space = clamped_space(mesh)
    weights = rod_region_weights(eps, matrix_weight)
    K = assemble_energy(mesh, C, operators.strain_scales(eps), weights)
    F = assemble_load(mesh, f)
    sub = space.substitution
    system = SparseSystem(sub.reduce_matrix(K), sub.reduce_vector(F, K), {"eps": eps, "weights": weights})
    return space, system, F


def solve_rod_micro(
    mesh: RegionTaggedMesh,
    C: ElasticityTensorField,
    f: LoadField,
    eps: float,
    tol: float = 1e-10,
    method: str = "auto",
    matrix_weight: float | None = None,
) -> RodMicroSolution:
    """Solve the clamped rod problem at scale ``eps`` on the fixed-domain mesh."""
    space, system, F = build_rod_system(mesh, C, f, eps, matrix_weight)
    nullspace = None
    if method != "direct":
        nullspace = space.substitution.S.T @ rigid_body_modes(mesh.points)
    x, info = solve_spd(system.matrix, system.rhs, tol=tol, method=method, near_nullspace=nullspace)
    u = FieldHandle(space, x)
    energy = float(x @ (system.matrix @ x))
    work = float(system.rhs @ x)
    return RodMicroSolution(eps, u, energy, work, info.residual, info, C, f, rod_region_weights(eps, matrix_weight))


# ----------------------------------------------------------------------------
# physical-domain view


def locate_in_section(section: RegionTaggedMesh, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangle index and barycentric coordinates of 2D points (nearest-centroid search)."""
    pts = section.points[section.cells]
    centroids = pts.mean(axis=1)
    tree = cKDTree(centroids)
    k = min(16, section.n_cells)
    _, cand = tree.query(xy, k=k)
    cand = np.atleast_2d(cand)
    tri = np.full(len(xy), -1, dtype=np.int64)
    bary = np.zeros((len(xy), 3))
    for j in range(k):
        todo = tri < 0
        if not todo.any():
            break
        c = cand[todo, j]
        lam = _barycentric(pts[c], xy[todo])
        inside = np.all(lam >= -1e-12, axis=1)
        idx = np.flatnonzero(todo)[inside]
        tri[idx] = c[inside]
        bary[idx] = lam[inside]
    if np.any(tri < 0):
        # exhaustive fallback for points far from their nearest centroids
        for i in np.flatnonzero(tri < 0):
            lam = _barycentric(pts, np.broadcast_to(xy[i], (len(pts), 2)))
            hit = np.flatnonzero(np.all(lam >= -1e-12, axis=1))
            if len(hit) == 0:
                raise ValueError(f"point {xy[i]} lies outside the section")
            tri[i], bary[i] = hit[0], lam[hit[0]]
    return tri, bary


def _barycentric(tri_pts: np.ndarray, xy: np.ndarray) -> np.ndarray:
    p0, p1, p2 = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    d1, d2, dp = p1 - p0, p2 - p0, xy - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (dp[:, 0] * d2[:, 1] - dp[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * dp[:, 1] - d1[:, 1] * dp[:, 0]) / det
    return np.column_stack([1 - l1 - l2, l1, l2])


def evaluate_on_extruded(
    mesh: RegionTaggedMesh, nodal: np.ndarray, x: np.ndarray, gradient: bool = False,
):
    """Point values of a P1 prism field at fixed-domain points ``x`` (shape ``(n, 3)``).

    With ``gradient=True`` also returns ``(n, ncomp, 3)`` gradients.
    """
    section = mesh.section
    x = np.asarray(x, dtype=float)
    tri, bary = locate_in_section(section, x[:, :2])
    z = mesh.x3_nodes
    if np.any(x[:, 2] < z[0] - 1e-12) or np.any(x[:, 2] > z[-1] + 1e-12):
        raise ValueError("point outside the rod length")
    k = np.clip(np.searchsorted(z, x[:, 2], side="right") - 1, 0, len(z) - 2)
    hz = z[k + 1] - z[k]
    t = (x[:, 2] - z[k]) / hz
    nv2 = section.n_vertices
    ids = section.cells[tri]
    lo_nodes = nodal[ids + (k * nv2)[:, None]]
    hi_nodes = nodal[ids + ((k + 1) * nv2)[:, None]]
    lo = np.einsum("na,nac->nc", bary, lo_nodes)
    hi = np.einsum("na,nac->nc", bary, hi_nodes)
    vals = (1 - t)[:, None] * lo + t[:, None] * hi
    if not gradient:
        return vals
    _, g2 = triangle_geometry(section.points, section.cells[tri])  # (n, 3, 2)
    mix = (1 - t)[:, None, None] * lo_nodes + t[:, None, None] * hi_nodes  # (n, 3, c)
    grad = np.zeros(vals.shape + (3,))
    grad[..., :2] = np.einsum("nad,nac->ncd", g2, mix)
    grad[..., 2] = (hi - lo) / hz[:, None]
    return vals, grad


@dataclass(frozen=True, eq=False)
class PhysicalFieldView:
    """Displacement of the thin rod: ``u_hat_alpha(eps x', x3) = u_alpha(x) / eps``,
    ``u_hat_3(eps x', x3) = u_3(x)``."""

    eps: float
    solution: RodMicroSolution

    def to_fixed(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.column_stack([X[:, 0] / self.eps, X[:, 1] / self.eps, X[:, 2]])

    def to_physical(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.column_stack([self.eps * x[:, 0], self.eps * x[:, 1], x[:, 2]])

    def values(self, X: np.ndarray) -> np.ndarray:
        u = evaluate_on_extruded(self.solution.mesh, self.solution.nodal(), self.to_fixed(X))
        u[:, :2] /= self.eps
        return u

    def gradient(self, X: np.ndarray) -> np.ndarray:
        """Physical gradient ``d u_hat_i / d X_j`` as ``(n, 3, 3)``."""
        _, g = evaluate_on_extruded(self.solution.mesh, self.solution.nodal(), self.to_fixed(X), gradient=True)
        g = g.copy()
        g[:, :2, :] /= self.eps
        g[:, :, :2] /= self.eps
        return g

    def strain(self, X: np.ndarray) -> np.ndarray:
        """Mandel vectors of the physical strain ``E u_hat``."""
        g = self.gradient(X)
        return to_mandel(0.5 * (g + np.swapaxes(g, 1, 2)))

    def load(self, X: np.ndarray) -> np.ndarray:
        """Physical load ``(eps f_alpha, f_3)`` at physical points."""
        x = self.to_fixed(X)
        section = self.solution.mesh.section
        tri, _ = locate_in_section(section, x[:, :2])
        reg = section.cell_region[tri].astype(np.int8)
        f = self.solution.load.evaluate(EvaluationPoints(x, reg))
        f[:, :2] *= self.eps
        return f


def to_physical(sol: RodMicroSolution) -> PhysicalFieldView:
    return PhysicalFieldView(sol.eps, sol)


# ----------------------------------------------------------------------------
# post-processing


def quadrature_operator_values(mesh: RegionTaggedMesh, nodal: np.ndarray, builder, rule=None):
    """Yield ``(data, values)`` with ``values = builder(grads) @ u_e`` at quadrature points."""
    flat = np.asarray(nodal, dtype=float).reshape(-1)
    for data in iter_element_data(mesh, CHUNK, rule):
        edofs = vector_dofs(mesh.cells[data.cells])
        ue = flat[edofs]  # (ne, nd)
        B = builder(data.grads)
        yield data, np.einsum("eqkd,ed->eqk", B, ue)


def operator_norm(mesh: RegionTaggedMesh, nodal: np.ndarray, builder, region: int | None = None) -> float:
    total = 0.0
    for data, vals in quadrature_operator_values(mesh, nodal, builder):
        w = data.weights
        if region is not None:
            w = w * (mesh.cell_region[data.cells] == region)[:, None]
        total += float((w * (vals ** 2).sum(axis=2)).sum())
    return float(np.sqrt(total))


def apriori_norms(sol: RodMicroSolution) -> dict[str, float]:
    """The uniformly bounded quantities of the rod a priori estimate, plus the energy bound terms."""
    mesh, u, eps = sol.mesh, sol.nodal(), sol.eps
    strain = lambda g: operators.strain_B(g, operators.strain_scales(eps))  # noqa: E731
    grad = lambda g: operators.gradient_B(g, eps * operators.gradient_scales(eps))  # noqa: E731
    out = {
        "strain_fiber": operator_norm(mesh, u, strain, FIBER),
        "eps_grad_fiber": operator_norm(mesh, u, grad, FIBER),
        "h1_fiber": norm(u, "H1", mesh, region=FIBER),
        "eps_grad_matrix": operator_norm(mesh, u, grad, MATRIX),
        "h1_inplane_matrix": norm(u, "H1", mesh, region=MATRIX, components=(0, 1)),
        "l2h1_axial_matrix": norm(u, "L2H1", mesh, region=MATRIX, components=(2,)),
    }
    out["energy"] = sol.energy
    out["load_l2"] = load_l2_norm(mesh, sol.load)
    out["u_l2"] = norm(u, "L2", mesh)
    return out


def load_l2_norm(mesh: RegionTaggedMesh, f: LoadField, scaling=(1.0, 1.0, 1.0)) -> float:
    total = 0.0
    sc = np.asarray(scaling, dtype=float)
    for data in iter_element_data(mesh, CHUNK):
        ne, nq = data.weights.shape
        vals = f.evaluate(_points(mesh, data)).reshape(ne, nq, 3) * sc
        total += float((data.weights * (vals ** 2).sum(axis=2)).sum())
    return float(np.sqrt(total))


@dataclass(frozen=True)
class SectionCurves:
    """Cross-section averages at layer midpoints (fixed-domain form).

    ``strain_fiber``/``strain_matrix`` are averages of ``E^eps u`` (Mandel
    vectors), ``eps_strain_matrix`` the matrix average of ``eps E^eps u``,
    ``mean_inplane`` the average of ``u_alpha`` (equal to the physical
    average of ``eps * u_hat_alpha``) and ``mean_axial`` the average of ``u_3``.
    """

    x3: np.ndarray
    strain_fiber: np.ndarray
    strain_matrix: np.ndarray
    eps_strain_matrix: np.ndarray
    mean_inplane: np.ndarray
    mean_axial: np.ndarray


def _midlayer_rule() -> quadrature.Rule:
    t = quadrature.triangle(2)
    pts = np.column_stack([t.points, np.full(len(t.weights), 0.5)])
    return quadrature.Rule(pts, t.weights)


def cross_section_averages(sol: RodMicroSolution) -> SectionCurves:
    """Exact slice averages at ``x3`` layer midpoints."""
    mesh, eps = sol.mesh, sol.eps
    nl = mesh.layers
    nt = mesh.section.n_cells
    z = mesh.x3_nodes
    rule = _midlayer_rule()
    strain = lambda g: operators.strain_B(g, operators.strain_scales(eps))  # noqa: E731
    layer = None
    acc = {k: np.zeros((nl, 6)) for k in ("fib", "mat")}
    area = {k: np.zeros(nl) for k in ("fib", "mat")}
    mean_u = np.zeros((nl, 3))
    tot_area = np.zeros(nl)
    nodal = sol.nodal()
    for data, vals in quadrature_operator_values(mesh, nodal, strain, rule):
        layer = data.cells // nt
        reg = mesh.cell_region[data.cells]
        # prism weights include the layer height; divide it out for slice integrals
        hz = z[layer + 1] - z[layer]
        w = data.weights / hz[:, None]
        uq, _ = interpolate_nodal(mesh, nodal, data)
        for key, r in (("fib", FIBER), ("mat", MATRIX)):
            m = reg == r
            np.add.at(acc[key], layer[m], np.einsum("eq,eqk->ek", w[m], vals[m]))
            np.add.at(area[key], layer[m], w[m].sum(axis=1))
        np.add.at(mean_u, layer, np.einsum("eq,eqc->ec", w, uq))
        np.add.at(tot_area, layer, w.sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        sf = acc["fib"] / area["fib"][:, None]
        sm = acc["mat"] / area["mat"][:, None]
    mid = 0.5 * (z[:-1] + z[1:])
    mu = mean_u / tot_area[:, None]
    return SectionCurves(mid, sf, sm, eps * sm, mu[:, :2], mu[:, 2])


def twist_diagnostic(sol: RodMicroSolution) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer fiber average of ``eps (H^eps u)_21 = d1 u2 / eps`` at layer midpoints."""
    mesh, eps = sol.mesh, sol.eps
    nl, nt, z = mesh.layers, mesh.section.n_cells, mesh.x3_nodes
    num = np.zeros(nl)
    den = np.zeros(nl)
    nodal = sol.nodal()
    for data in iter_element_data(mesh, CHUNK, _midlayer_rule()):
        m = mesh.cell_region[data.cells] == FIBER
        if not m.any():
            continue
        _, g = interpolate_nodal(mesh, nodal, data)
        layer = data.cells // nt
        w = data.weights * m[:, None]
        np.add.at(num, layer, (w * g[:, :, 1, 0]).sum(axis=1) / eps)
        np.add.at(den, layer, w.sum(axis=1))
    return 0.5 * (z[:-1] + z[1:]), num / den


def korn_slice_constant(
    geom, eps: float, h: float, slab_length: float = 1.0, layers: int = 2,
) -> float:
    """Estimate ``c`` in ``|eps H^eps u|_M <= c (|E^eps u|_M + |H^eps u|_F)`` on a slab.

    The constant is the square root of the largest generalized eigenvalue
    of the two quadratic forms on ``omega x (0, slab_length)`` after
    removing constants (the common kernel). Returns a discrete estimate.
    """
    from scipy.linalg import eigh

    from fibrod.mesh import build_rod_mesh

    mesh = build_rod_mesh(geom, slab_length, h, layers=layers)
    one = ElasticityTensorField.constant(MandelMatrix.from_entries(np.eye(6)))
    gsc = operators.gradient_scales(eps)
    num = MatrixAssembler(mesh.cells, mesh.n_vertices, 3)
    den = MatrixAssembler(mesh.cells, mesh.n_vertices, 3)
    eye9 = np.eye(9)
    for data in iter_element_data(mesh, CHUNK):
        reg = mesh.cell_region[data.cells]
        ne, nq = data.weights.shape
        mat = (reg == MATRIX)[:, None].astype(float)
        fib = 1.0 - mat
        G = operators.gradient_B(data.grads, gsc)
        D9 = np.broadcast_to(eye9, (ne, nq, 9, 9))
        num.add(data.cells, element_stiffness(G, D9, eps ** 2 * data.weights * mat))
        S = operators.strain_B(data.grads, operators.strain_scales(eps))
        D6 = np.broadcast_to(np.asarray(one.region_matrix(MATRIX)), (ne, nq, 6, 6))
        Kd = element_stiffness(S, D6, data.weights * mat) + element_stiffness(G, D9, data.weights * fib)
        den.add(data.cells, Kd)
    keep = np.arange(3, 3 * mesh.n_vertices)  # pin node 0: removes constants
    A = num.matrix()[keep][:, keep].toarray()
    B = den.matrix()[keep][:, keep].toarray()
    lam = eigh(A, B, eigvals_only=True, subset_by_index=[len(keep) - 1, len(keep) - 1])
    return float(np.sqrt(max(lam[-1], 0.0)))
