"""Kernel backend selection: compiled Cython extension or NumPy fallback."""

from __future__ import annotations

from . import _flowkern_py

try:
    from . import _flowkern  # compiled at install time when a toolchain exists
    HAVE_COMPILED = True
except ImportError:
    _flowkern = None
    HAVE_COMPILED = False


def get_kernel(backend: str = "auto"):
    if backend == "python":
        return _flowkern_py
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel not available; reinstall with a C toolchain")
        return _flowkern
    if backend == "auto":
        return _flowkern if HAVE_COMPILED else _flowkern_py
    raise ValueError(f"unknown backend {backend!r}")


def kernel_name(kernel) -> str:
    return "compiled" if kernel is _flowkern and _flowkern is not None else "python"
