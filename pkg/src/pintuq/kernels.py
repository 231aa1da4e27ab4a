"""Backend selection for the implicit fine-sweep kernels.

Prefers the compiled extension; falls back to the numpy/scipy
implementation when the extension is missing or when the environment
variable ``PINTUQ_PURE_PYTHON`` is set. Both backends implement the same
step-for-step semantics and agree to rounding precision.
"""
import os

from . import _kernels_fallback

if os.environ.get("PINTUQ_PURE_PYTHON"):
    _impl = _kernels_fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_fallback
        BACKEND = "python"

be_sweep_burgers = _impl.be_sweep_burgers
be_sweep_allencahn = _impl.be_sweep_allencahn


def get_backend(name: str):
    """Return a specific backend module ('cython' or 'python'); for benchmarks."""
    if name == "python":
        return _kernels_fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list:
    out = ["python"]
    try:
        from . import _kernels  # noqa: F401

        out.insert(0, "cython")
    except ImportError:
        pass
    return out
