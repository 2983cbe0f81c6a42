"""Kernel backend selection.

The compiled extension is preferred; the pure-Python fallback is
bit-compatible but roughly two orders of magnitude slower.  Override with
PUSHRL_BACKEND=python|cython (anything else falls back to auto).
"""

from __future__ import annotations

import os

from . import _kernel_py

_choice = os.environ.get("PUSHRL_BACKEND", "auto").lower()

if _choice == "python":
    kernel = _kernel_py
elif _choice == "cython":
    from . import _speedups as kernel  # noqa: F401  (ImportError is the diagnostic)
else:
    try:
        from . import _speedups as kernel
    except ImportError:
        kernel = _kernel_py

NAME: str = kernel.BACKEND_NAME


def available_backends() -> dict[str, object]:
    out: dict[str, object] = {"python": _kernel_py}
    try:
        from . import _speedups

        out["cython"] = _speedups
    except ImportError:
        pass
    return out
