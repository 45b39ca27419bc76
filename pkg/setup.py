"""Builds the compiled kernel extension; metadata lives in pyproject.toml.

-ffp-contract=off forbids fused multiply-add so the compiled lane is
bit-identical to the numpy lane. If Cython or a compiler is unavailable the
package still works through the pure-numpy fallback, so the extension is
declared optional.
"""

from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "boxtex.kernels._core",
        sources=["src/boxtex/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)
