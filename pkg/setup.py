import platform

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# hardware popcount for the fingerprint distance kernels
flags = ["-O3"] + (["-mpopcnt"] if platform.machine() in ("x86_64", "AMD64") else [])

extensions = [
    Extension(
        "molcnp._kernels",
        ["src/molcnp/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=flags,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
