import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "splatforest._kernels.raster_cy",
                ["src/splatforest/_kernels/raster_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
except ImportError:
    # No Cython at build time: install pure-Python only, the package
    # falls back to the numpy kernels at import.
    ext_modules = []

setup(ext_modules=ext_modules)
