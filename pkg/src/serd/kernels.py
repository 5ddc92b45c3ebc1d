"""Backend selection for the fixed-point loops.

The compiled extension is used when it was built; set ``SERD_PURE_PYTHON=1``
to force the numpy implementation.
"""
import os

from . import _fallback

_BACKENDS = {"python": _fallback}
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    _BACKENDS["cython"] = _compiled

if _compiled is not None and os.environ.get("SERD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None):
    """Module exposing ``soft_q_solve`` and ``grad_solve``."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}") from None


def soft_q_solve(succ, prob, reward, gamma, q, tol, max_iter, backend=None):
    return get_backend(backend).soft_q_solve(succ, prob, reward, float(gamma), q, float(tol), int(max_iter))


def grad_solve(succ, prob, pi, b, gamma, phi, tol, max_iter, backend=None):
    return get_backend(backend).grad_solve(succ, prob, pi, b, float(gamma), phi, float(tol), int(max_iter))
