"""Tree-kernel backend selection.

Prefers the compiled Cython kernels and falls back to the numpy reference
when the extension is missing.  Set ``RFSURVEY_PURE_PYTHON=1`` to force
the fallback (used by the parity tests and the benchmark).  Both backends
produce bit-identical trees.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("RFSURVEY_PURE_PYTHON", "").strip().lower() not in {"1", "true", "yes"}:
    try:
        from . import _cykernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

grow = _impl.grow
route = _impl.route

__all__ = ["BACKEND", "grow", "route", "_pykernels"]
