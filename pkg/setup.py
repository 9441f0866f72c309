"""Build script: compiles the optional Cython flow/likelihood kernel.

If Cython or a C compiler is unavailable the build still succeeds and the
package falls back to the pure-NumPy kernel at import time.
"""

from setuptools import setup, Extension

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mfabayes._flowkern",
                ["src/mfabayes/_flowkern.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
