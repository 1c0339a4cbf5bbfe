"""Backend selection for the hot kernels.

The compiled extension is used when it imports; setting the environment
variable ``BELTRAMI_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("BELTRAMI_PURE_PYTHON", "0") != "1":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

_threads = 1


def set_threads(k: int) -> None:
    global _threads
    _threads = max(1, int(k))


def get_threads() -> int:
    return _threads


def corner_flux_divergence(fpad, jc, jk, adv, half_d, hx, hy, hz, zero_flux):
    return _impl.corner_flux_divergence(fpad, jc, jk, adv, half_d, hx, hy, hz, tuple(bool(z) for z in zero_flux), _threads)


def box_muller(raw, n):
    return _impl.box_muller(raw, n)


def apply_boundary(x, lower, upper, periodic):
    """In-place boundary handling; returns the first failing particle index or -1."""
    return _impl.apply_boundary(x, lower, upper, periodic)


def backends():
    """Both implementations, for cross-checks and benchmarks."""
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
