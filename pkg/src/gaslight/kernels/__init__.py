"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension ``_ckernels`` is used when it imports; setting the
environment variable ``GASLIGHT_PURE_PYTHON=1`` forces the numpy backend.
Both backends consume identical inputs (including pre-drawn uniforms), so
they agree up to floating-point summation order.
"""

import importlib
import os

_NAMES = ("likelihood_matrix", "filter_step", "alpha_argmin", "categorical_sample")


def load(name: str):
    """Return the backend module ``"cython"`` or ``"python"``."""
    if name == "cython":
        return importlib.import_module("._ckernels", __name__)
    if name == "python":
        return importlib.import_module("._pykernels", __name__)
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("GASLIGHT_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
        return "python", load("python")
    try:
        return "cython", load("cython")
    except ImportError:
        return "python", load("python")


BACKEND, _impl = _select()

likelihood_matrix = _impl.likelihood_matrix
filter_step = _impl.filter_step
alpha_argmin = _impl.alpha_argmin
categorical_sample = _impl.categorical_sample

__all__ = ["BACKEND", "load", *_NAMES]
