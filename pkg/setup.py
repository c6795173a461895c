import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "graftdepth._kernels._ckernels",
        ["src/graftdepth/_kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fopenmp"] + ([] if os.environ.get("GRAFTDEPTH_PORTABLE") else ["-march=native"]),
        extra_link_args=["-fopenmp"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
