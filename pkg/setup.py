import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SPECPOOL_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext = Extension(
            "specpool._kernels",
            ["src/specpool/_kernels.pyx"],
            include_dirs=[np.get_include()],
            # no fused multiply-add: keeps results bit-identical to the numpy fallback
            extra_compile_args=["-O2", "-ffp-contract=off"],
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
