"""Builds the optional compiled engine; the package works without it."""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("MMTCP_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "mmtcp._cengine",
                ["src/mmtcp/_cengine.pyx"],
                # no contraction into FMA, so float results match the Python backend
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
