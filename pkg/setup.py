"""Build script: compiles the optional Cython simulation kernel.

The package works without the compiled extension (a numpy fallback is
selected at import time), so any build failure here is non-fatal by design:
install with CLIMCRED_PURE=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CLIMCRED_PURE"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "climcred._kernel",
                    ["src/climcred/_kernel.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
