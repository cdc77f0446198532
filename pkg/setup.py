"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a vectorized numpy
fallback is selected at import time), so a failed C build only costs speed.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, header mismatch, ...
            print(f"warning: compiled kernels skipped ({exc}); "
                  "falling back to the numpy backend", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to the numpy backend", file=sys.stderr)


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    if sys.platform == "win32":
        speed_flags = ["/O2"]
    else:
        # -O3 without fast-math: loop unrolling and vectorization are
        # welcome, reassociating float sums is not (results must be
        # bit-stable for a given build).
        speed_flags = ["-O3"]
    ext = Extension(
        "wdro._accel._kernels",
        sources=["src/wdro/_accel/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=speed_flags,
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
