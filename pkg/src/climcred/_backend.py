"""Simulation backend selection.

The compiled Cython kernel is used when it imported cleanly; otherwise the
numpy fallback runs. Override with the CLIMCRED_BACKEND environment variable
(``compiled`` | ``numpy``) or programmatically via ``set_backend``.
"""

from __future__ import annotations

import os

from . import _kernel_numpy
from .errors import ValidationError

try:
    from . import _kernel as _kernel_compiled

    HAVE_COMPILED = True
except ImportError:
    _kernel_compiled = None
    HAVE_COMPILED = False

_names = {"numpy": _kernel_numpy}
if HAVE_COMPILED:
    _names["compiled"] = _kernel_compiled

_forced = os.environ.get("CLIMCRED_BACKEND", "").strip().lower()
if _forced and _forced not in ("auto",):
    if _forced not in _names:
        raise ImportError(
            f"CLIMCRED_BACKEND={_forced!r} is not available; "
            f"choose from {sorted(_names)} or 'auto'"
        )
    _active = _forced
else:
    _active = "compiled" if HAVE_COMPILED else "numpy"


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name == "auto":
        _active = "compiled" if HAVE_COMPILED else "numpy"
        return
    if name not in _names:
        raise ValidationError(f"unknown backend {name!r}; available: {sorted(_names)}")
    _active = name


def get_kernel(name: str | None = None):
    """The run_chunk implementation for the requested (or active) backend."""
    return _names[name or _active]
