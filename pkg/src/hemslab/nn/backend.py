"""Kernel backend selection.

The compiled extension is preferred when importable; set HEMSLAB_FORCE_PY=1
to force the pure-numpy fallback (used by the benchmark and in CI matrices
without a compiler).
"""

import os

if os.environ.get("HEMSLAB_FORCE_PY"):
    from . import _lstm_numpy as kernels
    COMPILED = False
else:
    try:
        from . import _lstm_ext as kernels  # type: ignore[no-redef]
        COMPILED = True
    except ImportError:
        from . import _lstm_numpy as kernels  # type: ignore[no-redef]
        COMPILED = False

BACKEND_NAME = "cython" if COMPILED else "numpy"

lstm_seq_forward = kernels.lstm_seq_forward
lstm_seq_backward = kernels.lstm_seq_backward
