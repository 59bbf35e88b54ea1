"""Build the optional compiled MLP kernels.

The package works without them: ``fedhar.neural`` falls back to the numpy
implementation when the extension cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("FEDHAR_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("fedhar.neural._kernels", ["src/fedhar/neural/_kernels.pyx"],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
