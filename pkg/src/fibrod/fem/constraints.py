"""Linear constraints by elimination: ``u_full = S @ u_reduced + offset``.

Supported constraints: fixed values, periodic identification, ties of a
DOF to a linear combination of free DOFs, and a few dense integral rows
``G @ u = 0`` (zero mean, zero rotation moment). Integral rows are
eliminated through slave DOFs chosen by column pivoting, which keeps the
reduced system symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class ConstraintError(ValueError):
    """Inconsistent or dependent constraints."""


@dataclass(frozen=True)
class Substitution:
    S: sp.csr_matrix  # (n_full, n_reduced)
    offset: np.ndarray  # (n_full,)

    @property
    def n_full(self) -> int:
        return self.S.shape[0]

    @property
    def n_reduced(self) -> int:
        return self.S.shape[1]

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        return self.S @ reduced + (self.offset if reduced.ndim == 1 else self.offset[:, None])

    @cached_property
    def selection(self) -> np.ndarray | None:
        """Kept full DOFs when ``S`` only drops DOFs (one unit entry per column), else ``None``."""
        S = self.S.tocsc()
        if S.nnz != S.shape[1] or np.any(np.diff(S.indptr) != 1) or np.any(S.data != 1.0):
            return None
        return S.indices.astype(np.int64)

    def reduce_matrix(self, K: sp.spmatrix) -> sp.csr_matrix:
        sel = self.selection
        if sel is not None:
            # same values as S^T K S without the intermediate products
            return sp.csr_matrix(K)[sel][:, sel].tocsr()
        St = self.S.T.tocsr()
        return (St @ (K @ self.S)).tocsr()

    def reduce_vector(self, F: np.ndarray, K: sp.spmatrix | None = None) -> np.ndarray:
        """``S^T (F - K offset)``; the lifting term is skipped when there is no offset."""
        rhs = F
        if K is not None and np.any(self.offset):
            rhs = F - K @ self.offset
        return self.S.T @ rhs


@dataclass
class ConstraintSet:
    """Collects constraints on ``n`` DOFs and builds the elimination map."""

    n: int
    fixed: dict[int, float] = field(default_factory=dict)
    pairs: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    ties: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    integrals: list[np.ndarray] = field(default_factory=list)

    def fix(self, dofs, values=0.0) -> "ConstraintSet":
        dofs = np.atleast_1d(np.asarray(dofs, dtype=np.int64))
        vals = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
        for d, v in zip(dofs.tolist(), vals.tolist()):
            self.fixed[d] = v
        return self

    def identify(self, source, image) -> "ConstraintSet":
        """Periodicity: ``u[image] = u[source]``."""
        self.pairs.append((np.asarray(source, dtype=np.int64), np.asarray(image, dtype=np.int64)))
        return self

    def tie(self, dof: int, masters, coefs) -> "ConstraintSet":
        """``u[dof] = sum_k coefs[k] * u[masters[k]]``; masters must be otherwise unconstrained."""
        self.ties[int(dof)] = (np.asarray(masters, dtype=np.int64), np.asarray(coefs, dtype=float))
        return self

    def integral(self, row: np.ndarray) -> "ConstraintSet":
        """Homogeneous dense constraint ``row @ u = 0``."""
        row = np.asarray(row, dtype=float)
        if row.shape != (self.n,):
            raise ConstraintError("integral constraint row has wrong length")
        self.integrals.append(row)
        return self

    def build(self) -> Substitution:
        n = self.n
        parent = np.arange(n)

        def find(i: int) -> int:
            root = i
            while parent[root] != root:
                root = parent[root]
            while parent[i] != root:
                parent[i], i = root, parent[i]
            return root

        for src, img in self.pairs:
            for a, b in zip(src.tolist(), img.tolist()):
                ra, rb = find(a), find(b)
                if ra != rb:
                    lo, hi = min(ra, rb), max(ra, rb)
                    parent[hi] = lo
        roots = np.array([find(i) for i in range(n)]) if self.pairs else np.arange(n)

        fixed_root = {}
        for d, v in self.fixed.items():
            r = int(roots[d])
            if r in fixed_root and fixed_root[r] != v:
                raise ConstraintError(f"conflicting fixed values on DOF class {r}")
            fixed_root[r] = v
        tied_root = {int(roots[d]) for d in self.ties}
        if tied_root & set(fixed_root):
            raise ConstraintError("a DOF is both fixed and tied")

        is_root = roots == np.arange(n)
        free_mask = is_root.copy()
        for r in list(fixed_root) + list(tied_root):
            free_mask[r] = False
        col_of = np.full(n, -1, dtype=np.int64)
        col_of[free_mask] = np.arange(int(free_mask.sum()))
        n1 = int(free_mask.sum())

        offset = np.zeros(n)
        for r, v in fixed_root.items():
            offset[roots == r] = v

        # class members of free roots map to the root's column
        member_cols = col_of[roots]
        rows_idx = np.flatnonzero(member_cols >= 0)
        rows = [rows_idx]
        cols = [member_cols[rows_idx]]
        vals = [np.ones(len(rows_idx))]
        for d, (masters, coefs) in self.ties.items():
            mcols = col_of[roots[masters]]
            if np.any(mcols < 0):
                raise ConstraintError(f"tie on DOF {d} references a constrained master")
            members = np.flatnonzero(roots == roots[d])
            for m in members:
                rows.append(np.full(len(mcols), m))
                cols.append(mcols)
                vals.append(coefs)
        S1 = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n1)
        )
        if not self.integrals:
            return Substitution(S1, offset)

        G = np.vstack(self.integrals)
        if np.any(np.abs(G @ offset) > 1e-14 * max(1.0, np.abs(G).sum())):
            raise ConstraintError("integral constraints must be compatible with fixed values")
        Gr = np.asarray((sp.csr_matrix(G) @ S1).todense())
        k = Gr.shape[0]
        slaves: list[int] = []
        A = Gr.copy()
        for i in range(k):
            row = np.abs(A[i])
            row[slaves] = -1.0
            c = int(np.argmax(row))
            if row[c] <= 1e-12 * np.abs(Gr).max():
                raise ConstraintError("integral constraints are linearly dependent")
            A[i] /= A[i, c]
            for j in range(k):
                if j != i:
                    A[j] -= A[j, c] * A[i]
            slaves.append(c)
        # A is now identity on slave columns: x_s = -A[:, masters] x_m
        slave_arr = np.array(slaves)
        master_mask = np.ones(n1, dtype=bool)
        master_mask[slave_arr] = False
        masters = np.flatnonzero(master_mask)
        n2 = len(masters)
        mcol = np.full(n1, -1, dtype=np.int64)
        mcol[masters] = np.arange(n2)
        dense = -A[:, masters]  # (k, n2)
        dense[np.abs(dense) < 1e-300] = 0.0
        r_list = [masters]
        c_list = [np.arange(n2)]
        v_list = [np.ones(n2)]
        for i, s in enumerate(slaves):
            nz = np.flatnonzero(dense[i])
            r_list.append(np.full(len(nz), s))
            c_list.append(nz)
            v_list.append(dense[i, nz])
        S2 = sp.csr_matrix(
            (np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))), shape=(n1, n2)
        )
        return Substitution((S1 @ S2).tocsr(), offset)
