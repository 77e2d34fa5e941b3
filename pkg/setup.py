"""Build script. Compiles the optional Cython kernel extension.

If the extension cannot be built (no compiler, no Cython), the package
still installs and falls back to the numpy kernels at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "xlnav._kernels._ops_cy",
                ["src/xlnav/_kernels/_ops_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover
    print(f"xlnav: skipping Cython extension ({exc}); numpy fallback will be used",
          file=sys.stderr)

setup(ext_modules=ext_modules)
