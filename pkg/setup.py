"""Build script: compiles the optional Cython split/route kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compilation only costs speed.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pure-python install
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "rfsurvey._kernels._cykernels",
                ["src/rfsurvey/_kernels/_cykernels.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffp-contract=off: the numpy fallback must produce
                # bit-identical trees, so FMA contraction is disabled.
                extra_compile_args=["-O2", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
