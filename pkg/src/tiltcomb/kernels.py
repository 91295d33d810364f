"""Backend selection for the sampling kernels.

The compiled extension is used when it was built; otherwise, or when the
environment variable TILTCOMB_PURE_PYTHON is set to a non-empty value other
than "0", the numpy fallback is used.  Both produce identical streams.
"""
import os

from . import _kernels_py

_force_py = os.environ.get("TILTCOMB_PURE_PYTHON", "") not in ("", "0")

_impl = _kernels_py
BACKEND = "python"
if not _force_py:
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

uniforms = _impl.uniforms
draw_matrix = _impl.draw_matrix
weighted_totals = _impl.weighted_totals
smallest_gaps = _impl.smallest_gaps
log_factorial = _kernels_py.log_factorial
poisson_ptrs = _kernels_py.poisson_ptrs


def backends():
    """Available kernel modules by name (used by the benchmark and tests)."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
