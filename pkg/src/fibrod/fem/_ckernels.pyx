# cython: language_level=3
"""Compiled assembly kernels (see ``_pykernels`` for the reference versions)."""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


def element_matrices(const double[:, :, :, ::1] B, const double[:, :, :, ::1] D, const double[:, ::1] w):
    """Return ``K[e] = sum_q w[e,q] * B[e,q]^T D[e,q] B[e,q]`` for symmetric ``D``; only the upper triangle is summed."""
    cdef Py_ssize_t ne = B.shape[0], nq = B.shape[1], ns = B.shape[2], nd = B.shape[3]
    cdef Py_ssize_t e, q, i, j, k, l
    cdef double s, wq
    out = np.zeros((ne, nd, nd))
    cdef double[:, :, ::1] K = out
    cdef double[:, ::1] DB = np.empty((ns, nd))
    for e in range(ne):
        for q in range(nq):
            wq = w[e, q]
            if wq == 0.0:
                continue
            for k in range(ns):
                for j in range(nd):
                    s = 0.0
                    for l in range(ns):
                        s += D[e, q, k, l] * B[e, q, l, j]
                    DB[k, j] = wq * s
            for i in range(nd):
                for j in range(i, nd):
                    s = 0.0
                    for k in range(ns):
                        s += B[e, q, k, i] * DB[k, j]
                    K[e, i, j] += s
        for i in range(nd):
            for j in range(i):
                K[e, i, j] = K[e, j, i]
    return out


def scatter_add_csr(const int64_t[::1] indptr, const int64_t[::1] indices, double[::1] data,
                    const int64_t[:, ::1] edofs, const double[:, :, ::1] Ke):
    """Add element matrices into a CSR matrix with a fixed, sorted sparsity pattern.

    Element rows/columns with negative DOF ids are skipped. Accumulation runs
    in element order, so results are deterministic.
    """
    cdef Py_ssize_t ne = edofs.shape[0], nd = edofs.shape[1]
    cdef Py_ssize_t e, i, j
    cdef int64_t row, col, lo, hi, mid
    for e in range(ne):
        for i in range(nd):
            row = edofs[e, i]
            if row < 0:
                continue
            for j in range(nd):
                col = edofs[e, j]
                if col < 0:
                    continue
                lo = indptr[row]
                hi = indptr[row + 1] - 1
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if indices[mid] < col:
                        lo = mid + 1
                    else:
                        hi = mid
                if indices[lo] != col:
                    raise KeyError(f"entry ({row}, {col}) missing from sparsity pattern")
                data[lo] += Ke[e, i, j]
