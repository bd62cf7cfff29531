"""Backend selection for the per-session kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback.  ``use_backend`` switches at runtime (tests and the benchmark run
both).  Results agree to rounding, not bit-for-bit, so determinism holds per
backend.
"""

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"


def available_backends():
    return tuple(_BACKENDS)


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    previous = BACKEND
    _active = _BACKENDS[name]
    BACKEND = name
    return previous


def session_posteriors(N, grams, proj):
    return _active.session_posteriors(N, grams, proj)


def second_moments(N, ybar, cov):
    return _active.second_moments(N, ybar, cov)
