"""Constrained P1 vector spaces, discrete fields and assembled systems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from fibrod.fem.constraints import ConstraintSet, Substitution
from fibrod.fem.elements import ElementData
from fibrod.mesh import MeshError, RegionTaggedMesh


@dataclass(frozen=True, eq=False)
class SpaceDescriptor:
    """Vector P1 space on a mesh with eliminated constraints."""

    mesh: RegionTaggedMesh
    ncomp: int
    substitution: Substitution
    constraints: tuple[str, ...] = ()
    family: str = "P1"

    @property
    def n_full(self) -> int:
        return self.mesh.n_vertices * self.ncomp

    @property
    def dim(self) -> int:
        return self.substitution.n_reduced


@dataclass(frozen=True, eq=False)
class FieldHandle:
    """Reduced DOF vector together with its space."""

    space: SpaceDescriptor
    dofs: np.ndarray

    def __post_init__(self) -> None:
        if self.dofs.shape != (self.space.dim,):
            raise ValueError("DOF vector does not match the constrained space dimension")

    def full(self) -> np.ndarray:
        return self.space.substitution.expand(self.dofs)

    def nodal(self) -> np.ndarray:
        return self.full().reshape(-1, self.space.ncomp)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    metadata: dict = field(default_factory=dict)


def end_nodes(mesh: RegionTaggedMesh, which: str = "both") -> np.ndarray:
    """Vertices on ``x3 = 0`` (``bottom``), ``x3 = length`` (``top``) or both."""
    if mesh.x3_nodes is None:
        raise MeshError("end conditions need an extruded mesh")
    nv2 = mesh.section.n_vertices
    nodes = []
    if which in ("both", "bottom"):
        nodes.append(np.arange(nv2))
    if which in ("both", "top"):
        nodes.append(mesh.layers * nv2 + np.arange(nv2))
    return np.concatenate(nodes)


def clamped_space(mesh: RegionTaggedMesh, ends: str = "both") -> SpaceDescriptor:
    """3-component P1 space vanishing on the clamped end faces."""
    nodes = end_nodes(mesh, ends)
    cs = ConstraintSet(3 * mesh.n_vertices).fix((3 * nodes[:, None] + np.arange(3)).ravel())
    tag = "clamped-both-ends" if ends == "both" else f"clamped-{ends}"
    return SpaceDescriptor(mesh, 3, cs.build(), (tag,))


def interpolate_nodal(mesh: RegionTaggedMesh, nodal: np.ndarray, data: ElementData):
    """Values ``(ne, nq, ncomp)`` and gradients ``(ne, nq, ncomp, dim)`` at quadrature points."""
    conn = mesh.cells[data.cells]
    ue = nodal[conn]  # (ne, nn, ncomp)
    values = np.einsum("qa,eac->eqc", data.values, ue)
    grads = np.einsum("eqad,eac->eqcd", data.grads, ue)
    return values, grads
