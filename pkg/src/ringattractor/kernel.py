"""Backend selection for the LIF inner loop.

The compiled core is used when it imports; otherwise the numpy fallback.
Set ``RING_SIM_PURE=1`` to force the fallback.
"""

import os

from . import _pykernel

BACKEND = "python"
advance = _pykernel.advance

if os.environ.get("RING_SIM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernel
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        advance = _ckernel.advance
        BACKEND = "cython"

python_advance = _pykernel.advance


def compiled_advance():
    """The compiled ``advance`` or None when the extension is not built."""
    try:
        from . import _ckernel
    except ImportError:  # pragma: no cover
        return None
    return _ckernel.advance
