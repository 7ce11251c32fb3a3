"""Kernel selection: compiled Cython kernels when built, numpy otherwise.

Set ``FIBROD_PURE_PYTHON=1`` to force the numpy kernels.
"""

from __future__ import annotations

import os

from fibrod.fem import _pykernels

if os.environ.get("FIBROD_PURE_PYTHON") == "1":
    _impl = _pykernels
else:
    try:
        from fibrod.fem import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

element_matrices = _impl.element_matrices
scatter_add_csr = _impl.scatter_add_csr
