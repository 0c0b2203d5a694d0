"""Builds the optional compiled kernels; the package falls back to numpy
implementations when the extension is missing."""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "opfbench._ckernels",
    ["src/opfbench/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3", "-fcx-limited-range"],
)

setup(ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}))
