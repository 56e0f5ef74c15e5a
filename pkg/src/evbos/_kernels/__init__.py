"""Backend dispatch for the estimator's hot kernels.

A compiled Cython extension is preferred when present; a NumPy implementation
with identical bit-level semantics is the fallback.  Set ``EVBOS_BACKEND`` to
``python`` or ``native`` to force a backend (``native`` raises if the
extension is missing).
"""

from __future__ import annotations

import ctypes
import os

from . import _py


def _tune_allocator() -> None:
    """Raise glibc's mmap/trim thresholds (best effort).

    The estimator's per-iteration NumPy temporaries sit right at glibc's
    default thresholds, so each iteration otherwise pays mmap/brk churn and
    page-fault storms (measured ~10x slowdown on 256x256 fields).  Opt out
    with EVBOS_KEEP_MALLOC=1.
    """
    if os.environ.get("EVBOS_KEEP_MALLOC"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass


_tune_allocator()

_KERNEL_NAMES = (
    "upsample_bilinear",
    "upsample_bilinear_adjoint",
    "sobel_xy",
    "sobel_xy_adjoint",
    "sample_gradient_bilinear",
)

_forced = os.environ.get("EVBOS_BACKEND", "").strip().lower()
if _forced not in ("", "native", "python"):
    raise ImportError(f"EVBOS_BACKEND must be 'native' or 'python', got {_forced!r}")

_native = None
if _forced != "python":
    try:
        import importlib

        _native = importlib.import_module("._native", __name__)
    except ImportError:
        _native = None
        if _forced == "native":
            raise ImportError(
                "EVBOS_BACKEND=native but the compiled extension is not available; "
                "reinstall with a C compiler and Cython present"
            )

_impl = _native if _native is not None else _py
BACKEND = "native" if _native is not None else "python"

upsample_bilinear = _impl.upsample_bilinear
upsample_bilinear_adjoint = _impl.upsample_bilinear_adjoint
sobel_xy = _impl.sobel_xy
sobel_xy_adjoint = _impl.sobel_xy_adjoint
sample_gradient_bilinear = _impl.sample_gradient_bilinear

# utilities that always run on NumPy (not perf-critical enough to compile)
bilinear_sample = _py.bilinear_sample
fold_reflect = _py.fold_reflect


def available_backends() -> dict:
    """Name -> module for every importable backend (used by the benchmark)."""
    out = {"python": _py}
    if _native is not None:
        out["native"] = _native
    else:
        try:
            import importlib

            out["native"] = importlib.import_module("._native", __name__)
        except ImportError:
            pass
    return out
