"""Hot numerical kernels with two interchangeable lanes.

The compiled Cython lane (``_ops_cy``) is preferred when it was built;
the numpy lane (``_ops_py``) is the fallback and the reference
semantics. Set ``XLNAV_PURE_PYTHON=1`` to force the fallback, e.g. for
benchmarking or debugging.
"""

import os

from . import _ops_py

if os.environ.get("XLNAV_PURE_PYTHON"):
    impl = _ops_py
else:
    try:
        from . import _ops_cy as impl  # type: ignore[no-redef]
    except ImportError:
        impl = _ops_py

BACKEND = impl.BACKEND_NAME


def available_backends():
    out = [_ops_py]
    try:
        from . import _ops_cy
        out.append(_ops_cy)
    except ImportError:
        pass
    return out
