"""Build script for the optional compiled nearest-neighbor kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time); set PRIVTEXT_SKIP_EXT=1 to skip compilation.
"""

import os
import sys

from setuptools import Extension, setup


def extensions():
    if os.environ.get("PRIVTEXT_SKIP_EXT") == "1":
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"privtext: Cython/numpy unavailable ({exc}); "
              "building without the compiled kernel", file=sys.stderr)
        return []
    ext = Extension(
        "privtext._nn_kernel",
        ["src/privtext/_nn_kernel.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
