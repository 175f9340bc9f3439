"""Build script for the optional compiled convolution kernels.

The package installs and runs fine without a compiler; voxbox.kernels falls
back to the vectorized numpy implementation at import time.
"""

from setuptools import Extension, setup

extensions = []
try:
    from Cython.Build import cythonize
    import numpy as np

    extensions = cythonize(
        [
            Extension(
                "voxbox.kernels._core",
                ["src/voxbox/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off: the kernels are specified to match the
                # numpy fallback bit-for-bit, which rules out fused mul-add.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=extensions)
