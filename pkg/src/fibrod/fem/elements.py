"""Lagrange P1 geometry on triangles, right prisms and tetrahedra, plus 1D Hermite cubics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from fibrod.fem import quadrature
from fibrod.mesh import RegionTaggedMesh


@dataclass(frozen=True)
class ElementData:
    """Shape data of a block of cells at their quadrature points.

    ``values`` has shape ``(nq, nn)`` (identical for all affine cells),
    ``grads`` ``(ne, nq, nn, dim)``, ``weights`` ``(ne, nq)`` (rule weight
    times Jacobian) and ``points`` ``(ne, nq, dim)``.
    """

    cells: np.ndarray  # indices into the mesh cell list
    values: np.ndarray
    grads: np.ndarray
    weights: np.ndarray
    points: np.ndarray


def _triangle_values(ref: np.ndarray) -> np.ndarray:
    s, t = ref[:, 0], ref[:, 1]
    return np.column_stack([1.0 - s - t, s, t])


_TRI_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_TET_REF_GRADS = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def triangle_geometry(points: np.ndarray, tris: np.ndarray):
    """Areas and constant shape-function gradients ``(ne, 3, 2)`` of P1 triangles."""
    p = points[tris][:, :, :2]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise ValueError("degenerate or inverted triangle")
    inv = np.empty_like(J)
    inv[:, 0, 0], inv[:, 1, 1] = J[:, 1, 1] / det, J[:, 0, 0] / det
    inv[:, 0, 1], inv[:, 1, 0] = -J[:, 0, 1] / det, -J[:, 1, 0] / det
    grads = np.einsum("ak,ekd->ead", _TRI_REF_GRADS, inv)
    return 0.5 * det, grads


def _prism_data(mesh: RegionTaggedMesh, cells: np.ndarray, rule: quadrature.Rule) -> ElementData:
    conn = mesh.cells[cells]
    area, g2 = triangle_geometry(mesh.points, conn[:, :3])
    z0 = mesh.points[conn[:, 0], 2]
    hz = mesh.points[conn[:, 3], 2] - z0
    if np.any(hz <= 0):
        raise ValueError("prism with non-positive height")
    ref = rule.points
    tri_vals = _triangle_values(ref[:, :2])  # (nq, 3)
    zeta = ref[:, 2]
    lin = np.column_stack([1.0 - zeta, zeta])  # (nq, 2)
    values = np.concatenate([tri_vals * lin[:, :1], tri_vals * lin[:, 1:]], axis=1)  # (nq, 6)
    ne, nq = len(cells), len(zeta)
    grads = np.empty((ne, nq, 6, 3))
    for b, sign in ((0, -1.0), (1, 1.0)):
        sl = slice(3 * b, 3 * b + 3)
        grads[:, :, sl, :2] = g2[:, None, :, :] * lin[None, :, b, None, None]
        grads[:, :, sl, 2] = sign * tri_vals[None, :, :] / hz[:, None, None]
    weights = (2.0 * area * hz)[:, None] * rule.weights[None, :]
    xy = np.einsum("qa,ead->eqd", tri_vals, mesh.points[conn[:, :3]][:, :, :2])
    z = z0[:, None] + hz[:, None] * zeta[None, :]
    points = np.concatenate([xy, z[:, :, None]], axis=2)
    return ElementData(cells, values, grads, weights, points)


def _triangle_data(mesh: RegionTaggedMesh, cells: np.ndarray, rule: quadrature.Rule) -> ElementData:
    conn = mesh.cells[cells]
    area, g = triangle_geometry(mesh.points, conn)
    values = _triangle_values(rule.points)
    nq = len(rule.weights)
    grads = np.broadcast_to(g[:, None], (len(cells), nq, 3, 2))
    weights = (2.0 * area)[:, None] * rule.weights[None, :]
    points = np.einsum("qa,ead->eqd", values, mesh.points[conn][:, :, :2])
    return ElementData(cells, values, grads, weights, points)


def _tetra_data(mesh: RegionTaggedMesh, cells: np.ndarray, rule: quadrature.Rule) -> ElementData:
    conn = mesh.cells[cells]
    p = mesh.points[conn]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise ValueError("degenerate or inverted tetrahedron")
    inv = np.linalg.inv(J)
    g = np.einsum("ak,ekd->ead", _TET_REF_GRADS, inv)
    r = rule.points
    values = np.column_stack([1.0 - r.sum(axis=1), r[:, 0], r[:, 1], r[:, 2]])
    nq = len(rule.weights)
    grads = np.broadcast_to(g[:, None], (len(cells), nq, 4, 3))
    weights = det[:, None] * rule.weights[None, :]
    points = np.einsum("qa,ead->eqd", values, p)
    return ElementData(cells, values, grads, weights, points)


def default_rule(cell_type: str) -> quadrature.Rule:
    if cell_type == "triangle":
        return quadrature.triangle(2)
    if cell_type == "prism":
        return quadrature.prism(2, 2)
    return quadrature.tetrahedron(2)


def element_data(mesh: RegionTaggedMesh, cells: np.ndarray | None = None,
                 rule: quadrature.Rule | None = None) -> ElementData:
    cells = np.arange(mesh.n_cells) if cells is None else np.asarray(cells)
    rule = rule or default_rule(mesh.cell_type)
    if mesh.cell_type == "triangle":
        return _triangle_data(mesh, cells, rule)
    if mesh.cell_type == "prism":
        return _prism_data(mesh, cells, rule)
    return _tetra_data(mesh, cells, rule)


def iter_element_data(mesh: RegionTaggedMesh, chunk: int = 4096,
                      rule: quadrature.Rule | None = None) -> Iterator[ElementData]:
    """Element data in fixed-order blocks of at most ``chunk`` cells."""
    for start in range(0, mesh.n_cells, chunk):
        yield element_data(mesh, np.arange(start, min(start + chunk, mesh.n_cells)), rule)


def cell_y_points(mesh: RegionTaggedMesh, data: ElementData) -> np.ndarray | None:
    """Cell coordinates ``y`` at the quadrature points of a periodic array mesh."""
    if mesh.cell_local_points is None:
        return None
    local = mesh.cell_local_points[data.cells]  # (ne, 3, 2)
    nq = data.values.shape[0]
    tri_vals = data.values[:, :3] + (data.values[:, 3:] if data.values.shape[1] == 6 else 0.0)
    return np.einsum("qa,ead->eqd", tri_vals.reshape(nq, 3), local)


# ----------------------------------------------------------------------------
# 1D Hermite cubic and linear elements on a node array


@dataclass(frozen=True)
class LineData:
    """Per-element 1D shape data at Gauss points.

    Hermite DOFs of node ``k`` are ``2k`` (value) and ``2k + 1`` (slope);
    P1 DOFs are node indices.
    """

    nodes: np.ndarray
    points: np.ndarray  # (ne, nq)
    weights: np.ndarray  # (ne, nq)
    herm: np.ndarray  # (ne, nq, 4) values
    herm_d1: np.ndarray
    herm_d2: np.ndarray
    herm_dofs: np.ndarray  # (ne, 4)
    lin: np.ndarray  # (nq, 2)
    lin_d1: np.ndarray  # (ne, nq, 2)
    lin_dofs: np.ndarray  # (ne, 2)


def hermite_basis(s: np.ndarray, L: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cubic Hermite shape functions and their first two ``x`` derivatives.

    ``s`` are local coordinates in ``[0, 1]`` and ``L`` the element lengths
    (broadcast together); local DOFs are ``(v0, s0, v1, s1)`` on the last axis.
    """
    s, L = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(L, dtype=float))
    H = np.stack([1 - 3 * s ** 2 + 2 * s ** 3, L * (s - 2 * s ** 2 + s ** 3),
                  3 * s ** 2 - 2 * s ** 3, L * (-s ** 2 + s ** 3)], axis=-1)
    d1 = np.stack([(-6 * s + 6 * s ** 2) / L, 1 - 4 * s + 3 * s ** 2,
                   (6 * s - 6 * s ** 2) / L, -2 * s + 3 * s ** 2], axis=-1)
    d2 = np.stack([(-6 + 12 * s) / L ** 2, (-4 + 6 * s) / L,
                   (6 - 12 * s) / L ** 2, (-2 + 6 * s) / L], axis=-1)
    return H, d1, d2


def line_data(nodes: np.ndarray, n_gauss: int = 4) -> LineData:
    nodes = np.asarray(nodes, dtype=float)
    L = np.diff(nodes)
    rule = quadrature.gauss_line(n_gauss)
    s = rule.points[:, 0]
    ne = len(L)
    pts = nodes[:-1, None] + L[:, None] * s[None, :]
    w = L[:, None] * rule.weights[None, :]
    Ls = L[:, None]
    H, d1, d2 = hermite_basis(s[None, :], Ls)
    k = np.arange(ne)
    herm_dofs = np.column_stack([2 * k, 2 * k + 1, 2 * k + 2, 2 * k + 3])
    lin = np.column_stack([1 - s, s])
    lin_d1 = np.broadcast_to(np.array([-1.0, 1.0])[None, None, :] / Ls[:, :, None], (ne, len(s), 2)).copy()
    lin_dofs = np.column_stack([k, k + 1])
    return LineData(nodes, pts, w, H, d1, d2, herm_dofs, lin, lin_d1, lin_dofs)


def hermite_eval(nodes: np.ndarray, dofs: np.ndarray, x: np.ndarray, derivative: int = 0) -> np.ndarray:
    """Evaluate a Hermite cubic field (DOFs ``[v0, s0, v1, s1, ...]``) or its derivatives at ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    L = nodes[e + 1] - nodes[e]
    s = (x - nodes[e]) / L
    if derivative not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    basis = np.moveaxis(hermite_basis(s, L)[derivative], -1, 0)
    d = np.asarray(dofs)
    return basis[0] * d[2 * e] + basis[1] * d[2 * e + 1] + basis[2] * d[2 * e + 2] + basis[3] * d[2 * e + 3]


def linear_eval(nodes: np.ndarray, values: np.ndarray, x: np.ndarray, derivative: int = 0) -> np.ndarray:
    """Evaluate a continuous piecewise-linear field or its derivative at ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    L = nodes[e + 1] - nodes[e]
    v = np.asarray(values)
    if derivative == 0:
        s = (x - nodes[e]) / L
        return (1 - s) * v[e] + s * v[e + 1]
    if derivative == 1:
        return (v[e + 1] - v[e]) / L
    raise ValueError("derivative order must be 0 or 1")
