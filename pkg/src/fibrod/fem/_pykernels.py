"""Pure numpy versions of the assembly kernels."""

from __future__ import annotations

import numpy as np


def element_matrices(B: np.ndarray, D: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Return ``K[e] = sum_q w[e,q] * B[e,q]^T D[e,q] B[e,q]`` with shape ``(ne, nd, nd)``."""
    DB = np.matmul(D, B) * w[:, :, None, None]
    return np.matmul(np.swapaxes(B, 2, 3), DB).sum(axis=1)


def scatter_add_csr(indptr, indices, data, edofs, Ke) -> None:
    """Add element matrices into a CSR matrix with a fixed, sorted sparsity pattern."""
    n_rows = len(indptr) - 1
    ncol = int(indices.max()) + 1 if len(indices) else 1
    nd = edofs.shape[1]
    rows = np.repeat(edofs, nd, axis=1).ravel()
    cols = np.tile(edofs, (1, nd)).ravel()
    vals = Ke.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    row_of_entry = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(indptr))
    pattern_keys = row_of_entry * ncol + indices
    keys = rows * ncol + cols
    pos = np.searchsorted(pattern_keys, keys)
    if np.any(pos >= len(pattern_keys)) or np.any(pattern_keys[np.minimum(pos, len(pattern_keys) - 1)] != keys):
        raise KeyError("entry missing from sparsity pattern")
    data += np.bincount(pos, weights=vals, minlength=len(data))
