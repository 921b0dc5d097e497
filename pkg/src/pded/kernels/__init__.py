"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``PDED_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

from . import _pykernels as python

cython = None
if os.environ.get("PDED_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as cython  # type: ignore[no-redef]
    except ImportError:  # extension not built
        cython = None

_impl = cython if cython is not None else python
BACKEND = "cython" if cython is not None else "python"

l0_best_subset = _impl.l0_best_subset
scan_prefixes = _impl.scan_prefixes

__all__ = ["BACKEND", "l0_best_subset", "scan_prefixes", "python", "cython"]
