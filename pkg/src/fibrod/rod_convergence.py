"""Distances between an ε-solution of the rod problem and the limit fields.

Both live on the same cross-section mesh; the micro mesh is its extrusion.
The limit displacement, the matrix corrector and the fiber correctors are
evaluated at the prism quadrature points, slice by slice in ``x3``.
"""

from __future__ import annotations

import numpy as np

from fibrod.fem import operators, quadrature
from fibrod.fem.elements import iter_element_data
from fibrod.fem.spaces import interpolate_nodal
from fibrod.rod_limit import RodLimitSolution
from fibrod.rod_micro import CHUNK, RodMicroSolution
from fibrod.tensors import FIBER, MATRIX, to_mandel

ERROR_KEYS = ("inplane_h1_error", "axial_l2h1_error", "fiber_strain_gap", "matrix_strain_gap")


def _same_section(a, b) -> bool:
    return a.points.shape == b.points.shape and a.cells.shape == b.cells.shape and np.array_equal(
        a.points, b.points
    ) and np.array_equal(a.cells, b.cells)


def scaled_strain(grads: np.ndarray, eps: float) -> np.ndarray:
    """Mandel ``E^eps u`` from nodal-field gradients ``(..., 3, 3)`` with ``[i, j] = d_j u_i``."""
    sym = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    return to_mandel(sym) * operators.strain_scales(eps)


def rod_limit_errors(micro: RodMicroSolution, limit: RodLimitSolution, rule: quadrature.Rule | None = None) -> dict:
    """Norms of ``u_alpha^eps - u_alpha`` in ``H1``, ``u3^eps - (u3 + z3)`` in
    ``L2(I; H1(omega))``, ``E^eps u^eps - E_f`` on the fiber and
    ``eps E^eps u^eps - E_m`` on the matrix.
    """
    mesh, eps = micro.mesh, micro.eps
    if mesh.section is None or not _same_section(mesh.section, limit.section):
        raise ValueError("micro mesh must be an extrusion of the limit section mesh")
    rule = rule or quadrature.prism(2, 2)
    zeta = np.unique(rule.points[:, 2])
    q_slice = np.searchsorted(zeta, rule.points[:, 2])
    z = mesh.x3_nodes
    slices = (z[:-1, None] + np.diff(z)[:, None] * zeta[None, :]).ravel()  # layer-major
    nz = len(zeta)

    zfield = limit.z_at(slices)  # (ns, nv, 3)
    fcorr = limit.fiber_correctors(slices)  # (ns, nvf, 3)
    xi = limit.xi(slices)
    dxi = limit.xi(slices, 1)
    gen = limit.generalized_strains(slices)
    to_fiber = np.full(limit.section.n_vertices, -1, dtype=np.int64)
    to_fiber[limit.fiber_parent] = np.arange(len(limit.fiber_parent))

    nt = mesh.section.n_cells
    nodal = micro.nodal()
    tot = dict.fromkeys(ERROR_KEYS, 0.0)
    for data in iter_element_data(mesh, CHUNK, rule):
        layer = data.cells // nt
        tri = mesh.section.cells[data.cells % nt]  # (ne, 3)
        s = layer[:, None] * nz + q_slice[None, :]  # (ne, nq)
        if not np.allclose(data.points[..., 2], slices[s], rtol=0.0, atol=1e-12 * max(1.0, z[-1])):
            raise RuntimeError("prism quadrature points do not sit on the expected slices")
        vals, grads = interpolate_nodal(mesh, nodal, data)
        g2 = data.grads[:, :, :3, :2] + data.grads[:, :, 3:, :2]  # in-plane P1 gradients
        tv = data.values[:, :3] + data.values[:, 3:]  # (nq, 3)
        reg = mesh.cell_region[data.cells]
        w = data.weights
        x12 = data.points[..., :2]

        # in-plane displacement in H1
        d = vals[..., :2] - xi[:2][:, s].transpose(1, 2, 0)
        gd = grads[..., :2, :].copy()
        gd[..., 2] -= dxi[:2][:, s].transpose(1, 2, 0)
        tot["inplane_h1_error"] += float((w * ((d ** 2).sum(-1) + (gd ** 2).sum((-1, -2)))).sum())

        # axial displacement in L2(I; H1(omega))
        ze = zfield[s[..., None], tri[:, None, :]]  # (ne, nq, 3, 3): slice, vertex, comp
        z3 = np.einsum("qa,eqa->eq", tv, ze[..., 2])
        gz3 = np.einsum("eqad,eqa->eqd", g2, ze[..., 2])
        u3 = xi[2][s] - x12[..., 0] * dxi[0][s] - x12[..., 1] * dxi[1][s] + z3
        gu3 = -np.stack([dxi[0][s], dxi[1][s]], axis=-1) + gz3
        tot["axial_l2h1_error"] += float((w * ((vals[..., 2] - u3) ** 2 + ((grads[..., 2, :2] - gu3) ** 2).sum(-1))).sum())

        E = scaled_strain(grads, eps)
        # matrix block against E_m
        m = reg == MATRIX
        if m.any():
            Bs = operators.section_B(g2[m])
            Em = np.einsum("eqkd,eqd->eqk", Bs, ze[m].reshape(m.sum(), -1, 9))
            tot["matrix_strain_gap"] += float((w[m] * ((eps * E[m] - Em) ** 2).sum(-1)).sum())
        f = reg == FIBER
        if f.any():
            loc = to_fiber[tri[f]]
            pe = fcorr[s[f][..., None], loc[:, None, :]]  # (nf, nq, 3, 3)
            Ef = np.einsum("eqkd,eqd->eqk", operators.section_B(g2[f]), pe.reshape(f.sum(), -1, 9))
            Ef += np.einsum("eqkl,eql->eqk", operators.rod_generalized_G(x12[f]), gen[s[f]])
            tot["fiber_strain_gap"] += float((w[f] * ((E[f] - Ef) ** 2).sum(-1)).sum())
    return {k: float(np.sqrt(v)) for k, v in tot.items()}
