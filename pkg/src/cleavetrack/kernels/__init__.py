"""Hot numeric kernels.

Every kernel exists twice: a loop-style body compiled with ``numba.njit`` and a
vectorised pure-numpy body. Set ``CLEAVETRACK_DISABLE_NUMBA=1`` before import
to force the numpy path (numba missing has the same effect).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and os.environ.get("CLEAVETRACK_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it untouched."""
    if numba is None:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


from .geometry import iou_matrix  # noqa: E402
from .hungarian import solve_square  # noqa: E402
from .gru import gru_layer_backward, gru_layer_forward  # noqa: E402

__all__ = [
    "USE_NUMBA",
    "backend",
    "njit",
    "iou_matrix",
    "solve_square",
    "gru_layer_forward",
    "gru_layer_backward",
]
