import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the numpy kernels are used
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("E1D3_NO_EXTENSION"):
    ext_modules = cythonize(
        [
            Extension(
                "e1d3._conv_ext",
                ["src/e1d3/_conv_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
