"""Selects the compiled dense-CRF kernels when built, else the numpy fallback.

Set ``NAZR_KERNELS=python`` to force the fallback. ``NAZR_THREADS`` caps the
OpenMP threads used by the compiled message pass.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

DEFAULT = "cython" if _ckernels is not None and os.environ.get("NAZR_KERNELS") != "python" else "python"


def get(name=None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def n_threads():
    raw = os.environ.get("NAZR_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1
