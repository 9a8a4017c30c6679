"""Build script for the optional compiled kernel backend.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed or skipped build is not fatal. Set
ACE_LAB_SKIP_EXT=1 to install the pure-Python build on purpose.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ACE_LAB_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ace_lab._kernels._core",
                    ["src/ace_lab/_kernels/_core.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
