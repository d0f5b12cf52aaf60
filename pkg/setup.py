"""Build script for the optional compiled lattice kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed cythonize/compile only costs speed.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/frictionlab/_lattice_kernel.pyx",
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
    include_dirs = [numpy.get_include()]
except Exception:  # pragma: no cover - cython/numpy missing at build time
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
