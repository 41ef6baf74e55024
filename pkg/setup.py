"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-numpy
backend is selected at import time), so a failed native build downgrades
to a warning instead of aborting the install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        warnings.warn(f"building without compiled kernels ({exc})")
        return []
    ext = Extension(
        "condmi._speedups",
        ["src/condmi/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


class optional_build_ext(build_ext):
    """Treat native build failures as non-fatal."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            warnings.warn(f"compiled kernels unavailable, using pure-python backend ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"failed to build {ext.name}: {exc}")


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
