"""Build script for the optional compiled LSTM kernel.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes training considerably faster.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hemslab.nn._lstm_ext",
                ["src/hemslab/nn/_lstm_ext.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
