"""Build script for the optional compiled kernel.

The package is fully functional without the extension (a pure NumPy
fallback is selected at import time); building it makes the docking
benchmark roughly an order of magnitude faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "dwellsafe._kernel._core",
                ["src/dwellsafe/_kernel/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

for ext in extensions:
    ext.optional = True  # never block install on a missing compiler

setup(ext_modules=extensions)
