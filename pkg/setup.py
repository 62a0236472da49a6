import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# No -ffast-math: the scan kernel must keep IEEE semantics so that the
# compiled and pure-Python backends agree to rounding error.
extensions = [
    Extension(
        "stssm.kernels._scan",
        ["src/stssm/kernels/_scan.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
