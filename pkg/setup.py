"""Build the optional Cython propagation kernel.

The package works without the extension (``nvqoc._fallback`` is used), so a
failed compile only emits a warning.
"""
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            warnings.warn(f"nvqoc: compiled kernel not built ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            warnings.warn(f"nvqoc: failed to build {ext.name} ({exc})")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("nvqoc: Cython unavailable; skipping compiled kernel")
        return []
    ext = Extension(
        "nvqoc._kernels",
        ["src/nvqoc/_kernels.pyx"],
        extra_compile_args=["-O3", "-fcx-limited-range"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
