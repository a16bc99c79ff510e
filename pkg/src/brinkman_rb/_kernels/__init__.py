"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension ``_ckernels`` is used when it was built and
``BRINKMAN_RB_PURE_PYTHON`` is unset or ``0``.  ``BACKEND`` tells which one
was picked.
"""

import os

from . import _pykernels

STATUS_OPTIMAL = _pykernels.STATUS_OPTIMAL
STATUS_INFEASIBLE = _pykernels.STATUS_INFEASIBLE
STATUS_ITERATION_LIMIT = _pykernels.STATUS_ITERATION_LIMIT
STATUS_UNBOUNDED = _pykernels.STATUS_UNBOUNDED

_ext = None
if os.environ.get("BRINKMAN_RB_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _ckernels as _ext
    except ImportError:  # extension not built
        _ext = None

if _ext is not None:
    bounded_simplex = _ext.bounded_simplex
    radical_inverse = _ext.radical_inverse
    BACKEND = "cython"
else:
    bounded_simplex = _pykernels.bounded_simplex
    radical_inverse = _pykernels.radical_inverse
    BACKEND = "python"

__all__ = [
    "BACKEND",
    "bounded_simplex",
    "radical_inverse",
    "STATUS_OPTIMAL",
    "STATUS_INFEASIBLE",
    "STATUS_ITERATION_LIMIT",
    "STATUS_UNBOUNDED",
]
