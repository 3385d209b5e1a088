import os
import subprocess
import sys
import tempfile

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


def _native_flags():
    """Probe whether the compiler accepts -march=native (built from source,
    so tuning for the build host is safe; falls back to plain -O3)."""
    if os.environ.get("SPECUNET_PORTABLE"):
        return []
    cc = os.environ.get("CC", "cc")
    with tempfile.TemporaryDirectory() as td:
        src = os.path.join(td, "probe.c")
        with open(src, "w") as fh:
            fh.write("int main(void){return 0;}\n")
        try:
            rc = subprocess.run(
                [cc, "-march=native", src, "-o", os.path.join(td, "probe")],
                capture_output=True,
            ).returncode
        except OSError:
            return []
    return ["-march=native"] if rc == 0 else []


class OptionalBuildExt(build_ext):
    """Build the compiled kernels if a toolchain is present, else skip.

    The package falls back to the pure-numpy backend at import time, so a
    failed extension build must not fail the install.
    """

    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"WARNING: skipping compiled kernels ({exc}); "
                  "the pure-numpy backend will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: building {ext.name} failed ({exc}); "
                  "the pure-numpy backend will be used")


try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "specunet.backends._ckernels",
                ["src/specunet/backends/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"] + _native_flags(),
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
