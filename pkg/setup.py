"""Builds the optional compiled ring kernel; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TRBFT_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("trbft._ring_core", ["src/trbft/_ring_core.pyx"], extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
