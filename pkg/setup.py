"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy/scipy
fallback is selected at import time), so compilation failures are
non-fatal. Set PINTUQ_SKIP_CYTHON=1 to skip the build entirely.
"""
import os

import numpy as np
from setuptools import Extension, setup

extensions = []
if not os.environ.get("PINTUQ_SKIP_CYTHON"):
    try:
        from Cython.Build import cythonize

        extensions = cythonize(
            [
                Extension(
                    "pintuq._kernels",
                    ["src/pintuq/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        extensions = []

setup(ext_modules=extensions)
