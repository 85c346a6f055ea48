"""Backend switch for the compiled kernels.

Set ``STOCHASTICNET_NUMBA=0`` before import to force the pure-numpy path.
"""
import os

NUMBA_REQUESTED = os.environ.get("STOCHASTICNET_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func
        return decorator

USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
