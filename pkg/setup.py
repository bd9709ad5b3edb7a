"""Build script for the optional compiled convolution kernels.

The package is fully functional without the extension (a vectorised numpy
fallback is selected at import time); set RGBN_NO_EXT=1 to force a pure
Python build.
"""
import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("RGBN_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "rgbn.engine.kernels._convkern",
        ["src/rgbn/engine/kernels/_convkern.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions())
