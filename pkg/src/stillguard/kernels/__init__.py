"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
numpy fallback is used otherwise. STILLGUARD_KERNELS=fallback|compiled
forces a choice (the latter raises if the extension is unavailable).
"""

import os

from . import reference

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

_forced = os.environ.get("STILLGUARD_KERNELS", "").strip().lower()
if _forced == "fallback":
    _active = reference
elif _forced == "compiled":
    if _compiled is None:
        raise ImportError("STILLGUARD_KERNELS=compiled but the extension is not built")
    _active = _compiled
elif _forced:
    raise ImportError(f"unknown STILLGUARD_KERNELS value: {_forced!r}")
else:
    _active = _compiled if _compiled is not None else reference


def backend_name():
    return "compiled" if _active is not reference else "fallback"


def has_compiled():
    return _compiled is not None


def get_backend(name):
    """Return a specific backend module ('compiled' or 'fallback')."""
    if name == "fallback":
        return reference
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel extension is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


conv3d_forward = _active.conv3d_forward
conv3d_grad_input = _active.conv3d_grad_input
conv3d_grad_weight = _active.conv3d_grad_weight
block_match = _active.block_match
