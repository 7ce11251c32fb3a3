"""Quadrature evaluation of L2, H1 and mixed norms of nodal fields."""

from __future__ import annotations

import numpy as np

from fibrod.fem.elements import iter_element_data
from fibrod.fem.spaces import FieldHandle, interpolate_nodal
from fibrod.mesh import RegionTaggedMesh

NORM_KINDS = ("L2", "H1", "L2H1", "H1semi")


def norm(
    u: FieldHandle | np.ndarray,
    kind: str = "L2",
    mesh: RegionTaggedMesh | None = None,
    region: int | None = None,
    components: tuple[int, ...] | None = None,
) -> float:
    """Norm of a nodal field (``(nv,)`` or ``(nv, ncomp)``) or a :class:`FieldHandle`.

    Kinds: ``L2``; ``H1`` (values and full gradient); ``H1semi``; ``L2H1``
    for ``L2(I; H1(omega))`` on extruded meshes, i.e. values and in-plane
    gradients integrated over all slices. ``region`` restricts the
    integration to fiber or matrix cells.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}")
    if isinstance(u, FieldHandle):
        mesh = u.space.mesh
        nodal = u.nodal()
    else:
        if mesh is None:
            raise ValueError("a mesh is required for raw nodal arrays")
        nodal = np.asarray(u, dtype=float)
    if nodal.ndim == 1:
        nodal = nodal[:, None]
    if nodal.shape[0] != mesh.n_vertices:
        raise ValueError("field does not live on this mesh")
    if kind == "L2H1" and mesh.dim != 3:
        raise ValueError("L2(I;H1(omega)) needs a 3D extruded mesh")
    if components is not None:
        nodal = nodal[:, list(components)]
    total = 0.0
    for data in iter_element_data(mesh):
        mask = np.ones(len(data.cells), dtype=bool) if region is None else mesh.cell_region[data.cells] == region
        if not mask.any():
            continue
        vals, grads = interpolate_nodal(mesh, nodal, data)
        w = data.weights * mask[:, None]
        dens = np.zeros_like(w)
        if kind in ("L2", "H1", "L2H1"):
            dens += (vals ** 2).sum(axis=2)
        if kind in ("H1", "H1semi"):
            dens += (grads ** 2).sum(axis=(2, 3))
        if kind == "L2H1":
            dens += (grads[..., :2] ** 2).sum(axis=(2, 3))
        total += float((w * dens).sum())
    return float(np.sqrt(total))
