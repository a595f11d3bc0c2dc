"""Build script: compiles the Monte Carlo path kernel when Cython is available.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed extension build must not fail the install.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "conelq._pathkernel",
                ["src/conelq/_pathkernel.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
