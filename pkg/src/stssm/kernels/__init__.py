"""Scan kernel backends: compiled extension with a pure-Python fallback.

The backend is picked once at import time. Set VMAMBA_KERNEL=cython or
VMAMBA_KERNEL=python to force a choice; the default ("auto") prefers the
compiled extension and silently falls back when it is not built.
"""

from __future__ import annotations

import os

from . import scan_py

try:
    from . import _scan as _scan_cy
except ImportError:  # extension not built
    _scan_cy = None

_BACKENDS = {"python": scan_py}
if _scan_cy is not None:
    _BACKENDS["cython"] = _scan_cy


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend(name: str):
    """Resolve a backend module by name ("auto", "cython", "python")."""
    if name == "auto":
        return _BACKENDS.get("cython", scan_py)
    if name not in _BACKENDS:
        raise ImportError(
            f"scan backend {name!r} unavailable; built backends: {available_backends()}"
        )
    return _BACKENDS[name]


_choice = os.environ.get("VMAMBA_KERNEL", "auto")
_active = get_backend(_choice)

ACTIVE_BACKEND = "cython" if _active is _scan_cy else "python"

scan_forward = _active.scan_forward
scan_backward = _active.scan_backward
