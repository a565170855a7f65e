"""Build the optional Cython likelihood kernel.

If Cython or a C compiler is unavailable the package still installs and
falls back to the numpy implementation in ``msocc._pykernels``.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("MSOCC_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "msocc._ckernels",
                    sources=["src/msocc/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
