"""Build script for the optional compiled kernel extension.

The package works without the extension (pure-Python kernels are selected
at import time), so the build is marked optional: a missing compiler just
produces a slower install.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "movehab._speedups",
        ["src/movehab/_speedups.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, language_level="3") if cythonize else [],
)
