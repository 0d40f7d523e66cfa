import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False


def _extensions():
    if os.environ.get("SCENTRUNC_NO_EXT"):
        return []
    source = "src/scentrunc/_greedy." + ("pyx" if USE_CYTHON else "c")
    if not os.path.exists(source):
        return []
    ext = Extension(
        "scentrunc._greedy",
        [source],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
    if USE_CYTHON:
        return cythonize([ext], compiler_directives={"language_level": "3"})
    return [ext]


setup(ext_modules=_extensions())
