import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffp-contract=off: the pure-Python fallback must be bit-identical to the
# compiled kernel, so FMA contraction is disabled.
ext = Extension(
    "pushrl._speedups",
    ["src/pushrl/_speedups.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3", "-ffp-contract=off"],
)

setup(ext_modules=cythonize(ext, language_level=3))
