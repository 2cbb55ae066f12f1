import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# No -ffast-math / -march=native: the compiled kernels must reproduce the
# pure-Python fallback bit for bit (same libm calls, no FMA contraction).
extensions = [
    Extension(
        "kaclab._kernels",
        ["src/kaclab/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O2", "-ffp-contract=off", "-fno-builtin"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
