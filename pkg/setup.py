"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-Python fallback is selected
at import time); building it is strongly recommended for realistic radius
search throughput. Compile failures therefore degrade to a warning instead
of aborting the install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build-time only
    numpy = None
    cythonize = None


class OptionalBuildExt(build_ext):
    """build_ext that downgrades compiler failures to warnings."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover
            warnings.warn(f"compiled kernels skipped: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            warnings.warn(f"compiled kernels skipped ({ext.name}): {exc}")


if cythonize is not None and numpy is not None:
    extensions = cythonize(
        [
            Extension(
                "voxloc._kernels",
                ["src/voxloc/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                language="c++",
                extra_compile_args=["-O3", "-std=c++14"],
            )
        ],
        language_level=3,
    )
else:  # pragma: no cover
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
