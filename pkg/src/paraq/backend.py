"""Kernel backend selection.

The environment variable ``PARAQ_BACKEND`` picks the kernel implementation:

* ``numba`` (default): jit-compiled, nogil kernels.
* ``numpy``: pure-numpy fallback, useful for debugging and for machines
  without a working numba install.

When unset, numba is used if it imports, otherwise the fallback is selected
silently. Requesting ``numba`` explicitly on a machine where it cannot be
imported is an error.
"""

from __future__ import annotations

import os

_requested = os.environ.get("PARAQ_BACKEND", "").strip().lower()

if _requested in ("", "numba"):
    try:
        from . import _kernels_numba as kernels
    except ImportError:
        if _requested == "numba":
            raise
        from . import _kernels_numpy as kernels
elif _requested == "numpy":
    from . import _kernels_numpy as kernels
else:
    raise ValueError(
        f"PARAQ_BACKEND={_requested!r} is not recognized (expected 'numba' or 'numpy')"
    )

BACKEND = kernels.BACKEND_NAME
