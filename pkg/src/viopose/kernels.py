"""Kernel dispatch: the compiled extension when importable, else the pure-Python fallback.

Set ``VIOPOSE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("VIOPOSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

dtw_accumulate = _impl.dtw_accumulate
kalman_ca = _impl.kalman_ca
pick_peaks = _impl.pick_peaks
