"""Backend selection for the hot kernels.

The compiled extension ``gridy._ckernels`` is used when importable; otherwise
the numpy fallback ``gridy._pykernels`` is used. Setting the environment
variable ``GRIDY_PURE_PYTHON=1`` forces the fallback.
"""

import importlib
import os

from . import _pykernels

BACKENDS = ("compiled", "python")


def load_backend(name):
    """Return the kernel module for ``name`` ('compiled' or 'python')."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        return importlib.import_module("gridy._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("GRIDY_PURE_PYTHON", "").strip() not in ("", "0"):
        return "python", _pykernels
    try:
        return "compiled", load_backend("compiled")
    except ImportError:
        return "python", _pykernels


BACKEND, _impl = _select()

mp_cdf = _impl.mp_cdf
mp_quantile = _impl.mp_quantile
var1_simulate = _impl.var1_simulate


def compiled_available():
    try:
        load_backend("compiled")
    except ImportError:
        return False
    return True
