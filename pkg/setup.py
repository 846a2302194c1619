"""Build the optional Cython event-generation kernel.

If Cython or a C compiler is missing the package still installs; the
simulator then falls back to its numpy implementation at import time.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("EVSIM_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "evsim.simulator._kernel",
                    ["src/evsim/simulator/_kernel.pyx"],
                    include_dirs=[np.get_include()],
                    # keep IEEE semantics so both backends agree bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
