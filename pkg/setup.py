"""Build script for the compiled kernels.

Metadata lives in pyproject.toml; this file only declares the Cython
extension. If Cython or a compiler is unavailable the package still
installs and runs on the pure-Python kernels.
"""
import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("LURK_VECCHIA_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "lurk_vecchia._kernels",
                    ["src/lurk_vecchia/_kernels.pyx"],
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
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
