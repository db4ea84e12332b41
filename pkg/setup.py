"""Build script: compiles the optional Cython trajectory kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed compilation is downgraded to a warning.
"""

import warnings

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/osgsim/_kernels/native.pyx",
        compiler_directives={"language_level": 3},
    )
    include_dirs = [np.get_include()]
except Exception as exc:  # pragma: no cover - build-env dependent
    warnings.warn(f"Cython kernel not built, using pure-python fallback: {exc}")
    ext_modules = []
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
