"""Backend selection for the convolution kernels.

Two interchangeable implementations exist: a Cython extension
(``specunet.backends._ckernels``) and a pure-numpy fallback
(``specunet.backends.numpy_backend``). The compiled one is preferred when it
imports cleanly. Selection can be forced with the environment variable
``SPECUNET_BACKEND=compiled|numpy`` or at runtime with :func:`use`.
"""

import os

from . import numpy_backend

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"numpy": numpy_backend}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = None


def available():
    """Names of the importable backends."""
    return sorted(_BACKENDS)


def use(name):
    """Switch the active backend ('compiled' or 'numpy')."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available()}")
    _active = _BACKENDS[name]
    return _active


def active():
    """The currently selected backend module."""
    return _active


def _select_initial():
    forced = os.environ.get("SPECUNET_BACKEND", "").strip().lower()
    if forced and forced != "auto":
        if forced not in _BACKENDS:
            raise ImportError(
                f"SPECUNET_BACKEND={forced!r} but that backend is unavailable "
                f"(have: {available()})"
            )
        return use(forced)
    return use("compiled" if "compiled" in _BACKENDS else "numpy")


_select_initial()
