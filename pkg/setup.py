"""Build the optional compiled sweep kernel.

Without Cython or a C compiler the package still installs and runs on the
pure numpy fallback.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("MULTISTAGE_MI_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "multistage_mi._csweep",
                    ["src/multistage_mi/_csweep.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
