"""Build the optional compiled kernels.

If Cython or a C compiler is missing the package still installs; the
pure-Python kernels are picked up at import time instead.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("BLENDED_GBDF_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "blended_gbdf._kernels",
                    ["src/blended_gbdf/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
