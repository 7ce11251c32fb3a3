"""Build the optional Cython kernels; the package works without them."""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FIBROD_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "fibrod.fem._ckernels",
                    ["src/fibrod/fem/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
