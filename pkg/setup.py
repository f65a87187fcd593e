import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "msifield.kernels._native",
    sources=["src/msifield/kernels/_native.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    # -ffp-contract=off keeps float expression ordering IEEE-strict so the
    # compiled kernels stay bit-reproducible across rebuilds.
    extra_compile_args=["-O3", "-ffp-contract=off", "-fopenmp"],
    extra_link_args=["-fopenmp"],
)

setup(ext_modules=cythonize([ext], language_level=3))
