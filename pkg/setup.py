"""Build the optional compiled kernel core.

The extension is a speedup, not a requirement: if compilation fails the
package installs anyway and falls back to the pure-numpy kernels at import.
"""

import os

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    compile_args = ["-O3"]
    link_args = []
    if os.environ.get("FMMKIT_NO_OPENMP") != "1":
        compile_args.append("-fopenmp")
        link_args.append("-fopenmp")

    extensions = cythonize(
        [
            Extension(
                "fmmkit._ckernels",
                ["src/fmmkit/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=compile_args,
                extra_link_args=link_args,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception:  # pragma: no cover - build hosts without a toolchain
    extensions = []

setup(ext_modules=extensions)
