"""Kernel backend selection.

The compiled extension is preferred when present; set FMMKIT_BACKEND=python
to force the pure-numpy kernels (or =compiled to fail loudly if the
extension is missing).
"""

from __future__ import annotations

import os

from . import _pykernels

_choice = os.environ.get("FMMKIT_BACKEND", "auto").lower()

if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"FMMKIT_BACKEND must be auto, compiled or python, got {_choice!r}")

if _choice == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _pykernels


def backend_name() -> str:
    """'compiled' when the extension kernels are active, else 'python'."""
    return "compiled" if kernels.IS_COMPILED else "python"


def get_kernels(name: str | None = None):
    """Kernel module for `name` ('compiled'/'python'), default the active one."""
    if name is None or name == backend_name():
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
