"""Kernel dispatch: compiled extension when available, numpy otherwise.

The active backend is chosen at import time. Set DEMOPAIR_KERNELS=python (or
=cython) to force one; the default "auto" prefers the compiled extension and
silently falls back to numpy when the extension was not built. All callers go
through this module's attributes, so `set_backend` swaps implementations at
runtime (the benchmark uses this to time both).
"""

import os

from . import reference

_BACKENDS = {"python": reference}

try:
    from . import _core

    _BACKENDS["cython"] = _core
except ImportError:
    _core = None

KERNEL_NAMES = (
    "layernorm_fwd",
    "layernorm_bwd",
    "softmax_rows",
    "softmax_rows_bwd",
    "log_softmax_rows",
    "gelu_fwd",
    "gelu_bwd",
    "codebook_assign",
    "adamw_update",
)

_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Activate a backend by name ('python' or 'cython')."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(
            f"kernel backend {name!r} not available; have {available_backends()}"
        )
    mod = _BACKENDS[name]
    for fn in KERNEL_NAMES:
        globals()[fn] = getattr(mod, fn)
    _active = name


def backend_name():
    return _active


_requested = os.environ.get("DEMOPAIR_KERNELS", "auto")
if _requested == "auto":
    _requested = "cython" if "cython" in _BACKENDS else "python"
set_backend(_requested)
