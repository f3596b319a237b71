import os

from setuptools import Extension, setup

# The compiled scanner is optional: without Cython or a C compiler the package
# falls back to the pure-Python scanner at import time.
ext_modules = []
if not os.environ.get("MECHFORGE_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "mechforge._scan",
                    ["src/mechforge/_scan.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
