"""Convolution kernel backend selection.

The compiled Cython backend is used when it imported successfully; the
pure-numpy reference backend is the fallback. Override with the
CALSEG_KERNELS environment variable: "auto" (default), "compiled", or
"python". Both backends share one contract and agree to float64
round-off; each is individually bit-deterministic.
"""

from __future__ import annotations

import os

from . import _reference

try:
    from . import _compiled
except ImportError:
    _compiled = None


def _select():
    choice = os.environ.get("CALSEG_KERNELS", "auto").strip().lower()
    if choice in ("", "auto"):
        return _compiled if _compiled is not None else _reference
    if choice == "python":
        return _reference
    if choice in ("compiled", "ext", "c"):
        if _compiled is None:
            raise ImportError(
                "CALSEG_KERNELS=compiled but the extension is not built; "
                "reinstall the package or set CALSEG_KERNELS=python"
            )
        return _compiled
    raise ValueError(f"CALSEG_KERNELS={choice!r}: expected auto, compiled, or python")


_active = _select()

BACKEND = _active.BACKEND_NAME
HAVE_COMPILED = _compiled is not None

conv_fwd = _active.conv_fwd
conv_grad_input = _active.conv_grad_input
conv_grad_kernel = _active.conv_grad_kernel


def backends() -> dict:
    """Importable backend modules by name (for tests and benchmarks)."""
    out = {"python": _reference}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
