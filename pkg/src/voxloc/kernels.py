"""Kernel backend selection.

The compiled extension is preferred; the pure-Python module is a drop-in
fallback with identical semantics. ``BACKEND`` names the one in use.
"""

from __future__ import annotations

try:
    from . import _kernels as _impl
except ImportError:  # pragma: no cover - depends on whether the ext built
    from . import _kernels_py as _impl

BACKEND: str = _impl.BACKEND_NAME
OctreeCore = _impl.OctreeCore
radius_search_flat = _impl.radius_search_flat
radius_search_flat_batch = _impl.radius_search_flat_batch


def available_backends() -> dict:
    """Importable kernel modules by name (for tests and benchmarks)."""
    from . import _kernels_py

    backends = {_kernels_py.BACKEND_NAME: _kernels_py}
    try:
        from . import _kernels

        backends[_kernels.BACKEND_NAME] = _kernels
    except ImportError:  # pragma: no cover
        pass
    return backends
