"""Sparse assembly of bilinear and linear forms with a fixed sparsity pattern."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from fibrod.fem import kernels


def vector_dofs(cells: np.ndarray, ncomp: int = 3) -> np.ndarray:
    """Node-major element DOF table ``ncomp * node + component``."""
    cells = np.asarray(cells, dtype=np.int64)
    return (ncomp * cells[:, :, None] + np.arange(ncomp)).reshape(len(cells), -1)


def node_graph(cells: np.ndarray, n_nodes: int) -> sp.csr_matrix:
    """Boolean node adjacency (nodes sharing a cell), sorted CSR."""
    cells = np.asarray(cells, dtype=np.int64)
    nn = cells.shape[1]
    rows = np.repeat(cells, nn, axis=1).ravel()
    cols = np.tile(cells, (1, nn)).ravel()
    keys = np.unique(rows * n_nodes + cols)
    r, c = np.divmod(keys, n_nodes)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    np.cumsum(indptr, out=indptr)
    return sp.csr_matrix((np.ones(len(c)), c, indptr), shape=(n_nodes, n_nodes))


def vector_pattern(cells: np.ndarray, n_nodes: int, ncomp: int = 3) -> sp.csr_matrix:
    """CSR pattern (zero data, sorted indices) for node-major vector fields."""
    g = node_graph(cells, n_nodes)
    deg = np.diff(g.indptr)
    block = (ncomp * g.indices[:, None] + np.arange(ncomp)).ravel()  # per node row, its column block
    # each node row's block is repeated ncomp times (once per component row)
    starts = ncomp * g.indptr[:-1]
    lens = ncomp * deg
    row_starts = np.repeat(starts, ncomp)
    row_lens = np.repeat(lens, ncomp)
    indptr = np.zeros(n_nodes * ncomp + 1, dtype=np.int64)
    np.cumsum(row_lens, out=indptr[1:])
    offsets = np.arange(indptr[-1]) - np.repeat(indptr[:-1], row_lens)
    indices = block[np.repeat(row_starts, row_lens) + offsets].astype(np.int64)
    n = n_nodes * ncomp
    return sp.csr_matrix((np.zeros(len(indices)), indices, indptr), shape=(n, n))


class MatrixAssembler:
    """Accumulates element matrices into a preallocated CSR pattern.

    Blocks are added in call order, so results are reproducible bit for bit.
    """

    def __init__(self, cells: np.ndarray, n_nodes: int, ncomp: int = 3):
        self.pattern = vector_pattern(cells, n_nodes, ncomp)
        self.indptr = self.pattern.indptr.astype(np.int64)
        self.indices = self.pattern.indices.astype(np.int64)
        self.data = np.zeros(len(self.indices))
        self.ncomp = ncomp
        self.cells = np.asarray(cells, dtype=np.int64)

    def add(self, cell_ids: np.ndarray, Ke: np.ndarray) -> None:
        edofs = np.ascontiguousarray(vector_dofs(self.cells[cell_ids], self.ncomp))
        kernels.scatter_add_csr(self.indptr, self.indices, self.data, edofs, np.ascontiguousarray(Ke))

    def matrix(self) -> sp.csr_matrix:
        n = len(self.indptr) - 1
        return sp.csr_matrix((self.data.copy(), self.indices, self.indptr), shape=(n, n))


def element_stiffness(B: np.ndarray, D: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_q w B^T D B`` per element, dispatched to the selected kernel."""
    B = np.ascontiguousarray(B, dtype=float)
    D = np.ascontiguousarray(np.broadcast_to(D, B.shape[:2] + (B.shape[2], B.shape[2])), dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    return kernels.element_matrices(B, D, w)


def element_coupling(B: np.ndarray, D: np.ndarray, G: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_q w B^T D G`` per element, shape ``(ne, nd, ng)``."""
    DG = np.matmul(D, G) * w[:, :, None, None]
    return np.matmul(np.swapaxes(B, 2, 3), DG).sum(axis=1)


def scatter_rows(edofs: np.ndarray, Ce: np.ndarray, n: int) -> np.ndarray:
    """Sum element blocks ``(ne, nd, m)`` into a dense ``(n, m)`` array."""
    out = np.zeros((n, Ce.shape[2]))
    np.add.at(out, edofs.ravel(), Ce.reshape(-1, Ce.shape[2]))
    return out


def element_load(values: np.ndarray, f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_q w f_c N_a`` per element in node-major layout, shape ``(ne, nn*ncomp)``."""
    ne, nq, ncomp = f.shape
    out = np.einsum("eq,qa,eqc->eac", w, values, f)
    return out.reshape(ne, -1)


def scatter_vector(edofs: np.ndarray, Fe: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(edofs.ravel(), weights=Fe.ravel(), minlength=n)
