"""Nonlocal decomposition of the averaged axial displacement of the limit rod.

The slice average ``U`` of ``u3 + z3`` splits into the Bernoulli-Navier
average, a load-independent matrix compliance ``m0`` times the matrix
average of ``f3``, and a remainder ``m00`` driven by the deviation of
``f3`` from its matrix average. ``m0`` comes from the unit axial load on
the matrix annulus with the fiber boundary clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fibrod.loads import LoadField
from fibrod.mesh import RegionTaggedMesh, region_submesh
from fibrod.rod_limit import MatrixSliceSolver, RodLimitSolution, _slice_points
from fibrod.tensors import MATRIX, ElasticityTensorField


@dataclass(frozen=True, eq=False)
class NonlocalDecomposition:
    """Curves at the slices ``x3`` and the auxiliary fields on the annulus mesh.

    ``z0`` has shape ``(1, nv, 3)`` when the tensor does not vary along the
    rod (one field serves every slice) and ``(n, nv, 3)`` otherwise.
    """

    x3: np.ndarray
    annulus: RegionTaggedMesh
    z0: np.ndarray
    z00: np.ndarray
    m0: np.ndarray
    m00: np.ndarray
    U: np.ndarray
    mean_u3: np.ndarray
    mean_f3_matrix: np.ndarray
    section_area: float
    load_scale: float = 0.0

    @property
    def reconstructed_U(self) -> np.ndarray:
        return self.mean_u3 + self.m0 * self.mean_f3_matrix + self.m00

    @property
    def identity_residual(self) -> float:
        """Max deviation of the three-term sum from ``U`` relative to the largest term.

        ``load_scale`` (``m0`` times the matrix mean of ``|f3|``) floors the
        scale so loads whose terms all cancel analytically are not judged by
        round-off over round-off.
        """
        terms = (self.U, self.mean_u3, self.m0 * self.mean_f3_matrix, self.m00)
        scale = max(max(float(np.abs(t).max(initial=0.0)) for t in terms), self.load_scale, np.finfo(float).tiny)
        return float(np.abs(self.reconstructed_U - self.U).max(initial=0.0)) / scale


def annulus_mesh(section: RegionTaggedMesh) -> RegionTaggedMesh:
    """Matrix part of a full section mesh; its ``interface`` edges border the fiber."""
    return region_submesh(section, MATRIX)[0]


def solve_z0(
    C: ElasticityTensorField, annulus: RegionTaggedMesh, x3: float = 0.0, section_area: float | None = None,
    solver: MatrixSliceSolver | None = None,
) -> tuple[np.ndarray, float]:
    """Unit axial load on the annulus, zero on the fiber boundary, free outer boundary.

    Returns the nodal field ``(nv, 3)`` and ``m0 = int z0_3 / |omega|``;
    ``section_area`` defaults to the annulus area plus the enclosed fiber polygon.
    """
    solver = solver or MatrixSliceSolver(C, annulus)
    F = solver.axial_load_vectors(lambda t, pts: np.ones(len(pts)), [x3])
    z0 = solver.solve_vectors(F, [x3])
    area = section_area if section_area is not None else _annulus_section_area(annulus)
    return z0[0], float(solver.integrate_axial(z0)[0]) / area


def _annulus_section_area(annulus: RegionTaggedMesh) -> float:
    fiber_poly = annulus.metadata.get("fiber_polygon_area")
    if fiber_poly is None:
        raise ValueError("annulus mesh lacks the fiber polygon area; pass section_area")
    return float(annulus.cell_measures().sum()) + float(fiber_poly)


def matrix_mean_f3(solver: MatrixSliceSolver, f: LoadField, x3, absolute: bool = False) -> np.ndarray:
    """``(1/|omega \\ fiber|) int_M f3`` (or ``|f3|``) per slice by the annulus quadrature."""
    x3 = np.atleast_1d(np.asarray(x3, dtype=float))
    d = solver.data
    w = d.weights * solver.matrix_cells[:, None]
    area = w.sum()
    out = np.zeros(len(x3))
    if f.is_zero:
        return out
    for j, t in enumerate(x3):
        vals = f.component(2, _slice_points(d, t, solver.section.cell_region)).reshape(w.shape)
        out[j] = float((w * (np.abs(vals) if absolute else vals)).sum()) / area
    return out


def solve_z00(
    C: ElasticityTensorField, f: LoadField, annulus: RegionTaggedMesh, x3,
    solver: MatrixSliceSolver | None = None,
) -> np.ndarray:
    """Per-slice fields for the load ``f3 - mean_M f3``, shape ``(len(x3), nv, 3)``."""
    solver = solver or MatrixSliceSolver(C, annulus)
    x3 = np.atleast_1d(np.asarray(x3, dtype=float))
    if f.is_zero:
        return np.zeros((len(x3), annulus.n_vertices, 3))
    means = dict(zip(x3.tolist(), matrix_mean_f3(solver, f, x3).tolist()))
    F = solver.axial_load_vectors(lambda t, pts: f.component(2, pts) - means[float(t)], x3)
    return solver.solve_vectors(F, x3)


def decompose_U(
    limit: RodLimitSolution, x3=None, annulus: RegionTaggedMesh | None = None,
) -> NonlocalDecomposition:
    """Evaluate both sides of the decomposition at the slices ``x3`` (default: beam nodes).

    A supplied ``annulus`` must be the matrix part of the limit section mesh.
    """
    x3 = limit.x3_nodes if x3 is None else np.atleast_1d(np.asarray(x3, dtype=float))
    expected = annulus_mesh(limit.section)
    if annulus is None:
        annulus = expected
    elif not (
        annulus.points.shape == expected.points.shape and annulus.cells.shape == expected.cells.shape
        and np.array_equal(annulus.points, expected.points) and np.array_equal(annulus.cells, expected.cells)
    ):
        raise ValueError("annulus mesh does not match the limit section mesh")
    area = limit.section_area()
    C, f = limit.tensor, limit.load
    solver = MatrixSliceSolver(C, annulus)
    slices = [0.0] if solver.uniform else list(x3)
    z0_fields, m0_vals = [], []
    for t in slices:
        z, m = solve_z0(C, annulus, t, area, solver)
        z0_fields.append(z)
        m0_vals.append(m)
    z0 = np.stack(z0_fields)
    m0 = np.full(len(x3), m0_vals[0]) if solver.uniform else np.array(m0_vals)
    z00 = solve_z00(C, f, annulus, x3, solver)
    m00 = solver.integrate_axial(z00) / area
    mean_f3 = matrix_mean_f3(solver, f, x3)
    scale = float(np.max(np.abs(m0) * matrix_mean_f3(solver, f, x3, absolute=True), initial=0.0))
    return NonlocalDecomposition(
        x3=np.asarray(x3, dtype=float), annulus=annulus, z0=z0, z00=z00, m0=m0, m00=m00,
        U=limit.mean_u3(x3), mean_u3=limit.mean_bn_u3(x3), mean_f3_matrix=mean_f3, section_area=area,
        load_scale=scale,
    )

