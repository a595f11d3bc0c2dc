"""Select the path-simulation kernel at import time.

The compiled extension is preferred when it imports cleanly; otherwise the
NumPy fallback takes over.  Set CONELQ_BACKEND=python or =cython to force a
choice (forcing cython fails loudly if the extension is unavailable).
"""

from __future__ import annotations

import os

from . import _pathkernel_np

_forced = os.environ.get("CONELQ_BACKEND", "").strip().lower()

if _forced in ("python", "numpy"):
    _impl = _pathkernel_np
elif _forced == "cython":
    from . import _pathkernel as _impl
else:
    try:
        from . import _pathkernel as _impl
    except ImportError:
        _impl = _pathkernel_np

simulate_batch = _impl.simulate_batch
BACKEND_NAME = _impl.BACKEND_NAME


def available_backends() -> dict[str, object]:
    """Importable kernels keyed by name; used by tests and the benchmark."""
    impls: dict[str, object] = {"numpy": _pathkernel_np}
    try:
        from . import _pathkernel

        impls["cython"] = _pathkernel
    except ImportError:
        pass
    return impls
