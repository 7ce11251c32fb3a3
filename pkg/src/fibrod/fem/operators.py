"""Strain-type operators as Mandel B-matrices acting on nodal vector DOFs.

Element DOFs are node-major: local DOF ``3*a + i`` is component ``i`` of
node ``a``. All operators return arrays of shape ``(ne, nq, 6, 3*nn)``
(or 9 rows for full gradients) so that ``B @ u_e`` is the Mandel vector.
"""

from __future__ import annotations

import numpy as np

from fibrod.tensors import MANDEL_FACTORS, MANDEL_PAIRS, SQRT2


def strain_scales(eps: float = 1.0) -> np.ndarray:
    """Per-Mandel-row factors of the scaled strain: eps^-2 in-plane, eps^-1 mixed, 1 axial."""
    e2, e1 = eps ** -2, eps ** -1
    return np.array([e2, e2, 1.0, e1, e1, e2])


def gradient_scales(eps: float = 1.0) -> np.ndarray:
    """Factors of the scaled gradient, row-major over ``(i, j)`` for ``d_j u_i``."""
    s = np.empty((3, 3))
    s[:2, :2] = eps ** -2
    s[:2, 2] = eps ** -1
    s[2, :2] = eps ** -1
    s[2, 2] = 1.0
    return s.ravel()


def strain_B(grads: np.ndarray, scales: np.ndarray | None = None) -> np.ndarray:
    """Mandel symmetric-gradient operator for 3D displacement fields.

    ``grads`` is ``(ne, nq, nn, 3)``; row ``k`` of the result for the pair
    ``(i, j)`` is ``scale_k * f_k * (d_j u_i + d_i u_j) / 2``.
    """
    ne, nq, nn, _ = grads.shape
    B = np.zeros((ne, nq, 6, nn, 3))
    sc = np.ones(6) if scales is None else np.asarray(scales, dtype=float)
    for k, (i, j) in enumerate(MANDEL_PAIRS):
        c = sc[k] * MANDEL_FACTORS[k]
        if i == j:
            B[:, :, k, :, i] = c * grads[..., i]
        else:
            B[:, :, k, :, i] += 0.5 * c * grads[..., j]
            B[:, :, k, :, j] += 0.5 * c * grads[..., i]
    return B.reshape(ne, nq, 6, 3 * nn)


def gradient_B(grads: np.ndarray, scales: np.ndarray | None = None) -> np.ndarray:
    """Full (unsymmetrized) gradient ``scale_ij * d_j u_i``, rows ordered ``(i, j)`` row-major."""
    ne, nq, nn, _ = grads.shape
    B = np.zeros((ne, nq, 9, nn, 3))
    sc = np.ones(9) if scales is None else np.asarray(scales, dtype=float)
    for i in range(3):
        for j in range(3):
            B[:, :, 3 * i + j, :, i] = sc[3 * i + j] * grads[..., j]
    return B.reshape(ne, nq, 9, 3 * nn)


def section_B(grads2d: np.ndarray) -> np.ndarray:
    """Cross-section operator on fields ``(p1, p2, p3)`` of ``x'`` only.

    Packs the in-plane symmetric gradient of ``(p1, p2)`` and the
    antiplane shear ``d_alpha p3 / 2`` into a Mandel vector with zero axial
    entry. It is the strain of ``(w, v3)`` in fiber cross-section problems
    and of the matrix correctors in the matrix problems.
    """
    ne, nq, nn, _ = grads2d.shape
    B = np.zeros((ne, nq, 6, nn, 3))
    g1, g2 = grads2d[..., 0], grads2d[..., 1]
    B[:, :, 0, :, 0] = g1
    B[:, :, 1, :, 1] = g2
    h = 0.5 * SQRT2
    B[:, :, 3, :, 2] = h * g2
    B[:, :, 4, :, 2] = h * g1
    B[:, :, 5, :, 0] = h * g2
    B[:, :, 5, :, 1] = h * g1
    return B.reshape(ne, nq, 6, 3 * nn)


def rod_generalized_G(points2d: np.ndarray) -> np.ndarray:
    """Mandel strain of unit generalized strains ``(a, b1, b2, t)`` at section points.

    Axial entry ``a - x1*b1 - x2*b2``; shear entries ``t * x^R_alpha / 2`` with
    ``x^R = (-x2, x1)``. Shape ``(..., 6, 4)``.
    """
    x1, x2 = points2d[..., 0], points2d[..., 1]
    G = np.zeros(points2d.shape[:-1] + (6, 4))
    G[..., 2, 0] = 1.0
    G[..., 2, 1] = -x1
    G[..., 2, 2] = -x2
    h = 0.5 * SQRT2
    G[..., 3, 3] = h * x1  # 23 component: x^R_2 = x1
    G[..., 4, 3] = -h * x2  # 13 component: x^R_1 = -x2
    return G


def macro_matrix_G(shape: tuple[int, ...]) -> np.ndarray:
    """Direct Mandel strain of the macro gradients on the matrix part of a cell.

    Generalized variables ``g = (d1u1, d2u1, d1u2, d2u2, d3u1, d3u2, theta)``.
    The macro in-plane strain is ``sym grad' u`` and the shear entries are
    ``d3 u_alpha / 2``; ``theta`` enters only through the fiber trace data.
    """
    G = np.zeros(tuple(shape) + (6, 7))
    h = 0.5 * SQRT2
    G[..., 0, 0] = 1.0
    G[..., 1, 3] = 1.0
    G[..., 5, 1] = h
    G[..., 5, 2] = h
    G[..., 4, 4] = h
    G[..., 3, 5] = h
    return G


def macro_fiber_trace(y: np.ndarray) -> np.ndarray:
    """Values ``(u1^1, u2^1, u3 - mean)`` prescribed on the fiber disk as linear maps of ``g``.

    ``u^1_alpha = -y_beta d_beta u_alpha + theta y^R_alpha`` and
    ``u3 - mean = -y_alpha d3 u_alpha``. Shape ``(n, 3, 7)``.
    """
    y1, y2 = y[:, 0], y[:, 1]
    T = np.zeros((len(y), 3, 7))
    T[:, 0, 0] = -y1
    T[:, 0, 1] = -y2
    T[:, 0, 6] = -y2
    T[:, 1, 2] = -y1
    T[:, 1, 3] = -y2
    T[:, 1, 6] = y1
    T[:, 2, 4] = -y1
    T[:, 2, 5] = -y2
    return T
