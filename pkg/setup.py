"""Build script: compiles the optional hot-kernel extension.

If Cython or a C compiler is unavailable the build silently degrades to the
pure-Python kernel fallback (sediff.nn.kernels_py); the package is fully
functional either way. Rebuild in place with:

    python setup.py build_ext --inplace
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext as _build_ext


def extensions():
    if os.environ.get("SEDIFF_SKIP_EXT", "0") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "sediff.nn._kernels",
        ["src/sediff/nn/_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class OptionalBuildExt(_build_ext):
    """Let the wheel build succeed even when the extension cannot compile."""

    def run(self):
        try:
            super().run()
        except Exception as err:  # compiler missing etc.
            print(f"warning: skipping compiled kernels ({err}); "
                  "using the pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as err:
            print(f"warning: could not build {ext.name} ({err}); "
                  "using the pure-Python fallback")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
