"""Kernel backend selection: compiled extension when importable, numpy otherwise.

Set SECAGG_BACKEND=python or SECAGG_BACKEND=compiled to force a choice
(forcing "compiled" raises if the extension was not built).
"""

from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("SECAGG_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _kernels_py
elif _forced == "compiled":
    from . import _kernels as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

add_mod = _impl.add_mod
sub_mod = _impl.sub_mod
iadd_mod = _impl.iadd_mod
scalar_mul_mod = _impl.scalar_mul_mod


def active_backend() -> str:
    """Name of the kernel backend in use ("compiled" or "python")."""
    return _impl.BACKEND_NAME


def available_backends() -> dict:
    """Importable backend modules keyed by name; used by the benchmark CLI."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels

        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
