"""Hot loops with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``FABL_PURE_PYTHON=1`` to
force the fallback.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("FABL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

DEFAULT_BACKEND = BACKEND
group_sq_norms = _impl.group_sq_norms
channel_histograms = _impl.channel_histograms
affine_scores = _impl.affine_scores


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    backends = {"python": _pykernels}
    try:
        from . import _ckernels
        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends


def use_backend(name: str):
    """Switch the active backend for the whole process (tests and benchmarks)."""
    global BACKEND, group_sq_norms, channel_histograms, affine_scores
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"backend {name!r} is not available; have {sorted(backends)}")
    impl = backends[name]
    BACKEND = name
    group_sq_norms = impl.group_sq_norms
    channel_histograms = impl.channel_histograms
    affine_scores = impl.affine_scores


__all__ = ["BACKEND", "use_backend", "group_sq_norms", "channel_histograms", "affine_scores", "available_backends"]
