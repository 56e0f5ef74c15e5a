"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time); building it just makes the estimator's inner loop
faster.  `-ffp-contract=off` keeps the C arithmetic bit-compatible with the
NumPy backend (no FMA contraction), which the backend-parity tests rely on.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "evbos._kernels._native",
                ["src/evbos/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython / NumPy at build time: install the pure-Python package.
    ext_modules = []

setup(ext_modules=ext_modules)
