"""Kernel backend selection: numba-compiled or plain numpy.

The environment variable DUALBEAM_BACKEND picks the implementation:
  auto  (default) use numba when importable, else numpy
  numba require numba, fail if unavailable
  numpy force the pure-numpy reference kernels

Both backends run the exact same source (dualbeam.kernels). Results agree
to floating-point rounding (the two runtimes' exp/tanh can differ by an
ulp); any single backend is bit-reproducible from run to run.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

from . import kernels as _reference
from .errors import ConfigError

ENV_VAR = "DUALBEAM_BACKEND"
_KERNEL_NAMES = ("gru_forward", "gru_backward", "lstm_forward", "lstm_backward")

_active = None
_namespace = None


def _numpy_namespace() -> SimpleNamespace:
    return SimpleNamespace(**{name: getattr(_reference, name)
                              for name in _KERNEL_NAMES})


def _numba_namespace() -> SimpleNamespace:
    from numba import njit
    compiled = {name: njit(cache=True)(getattr(_reference, name))
                for name in _KERNEL_NAMES}
    return SimpleNamespace(**compiled)


def requested_backend() -> str:
    value = os.environ.get(ENV_VAR, "auto").strip().lower()
    if value not in ("auto", "numba", "numpy"):
        raise ConfigError(
            f"{ENV_VAR} must be auto, numba or numpy, got {value!r}")
    return value


def get_kernels() -> SimpleNamespace:
    """Resolve the backend once per process (or per reset_backend call)."""
    global _active, _namespace
    if _namespace is not None:
        return _namespace
    choice = requested_backend()
    if choice == "numpy":
        _active, _namespace = "numpy", _numpy_namespace()
    elif choice == "numba":
        _active, _namespace = "numba", _numba_namespace()
    else:
        try:
            _active, _namespace = "numba", _numba_namespace()
        except ImportError:
            _active, _namespace = "numpy", _numpy_namespace()
    return _namespace


def active_backend() -> str:
    get_kernels()
    return _active


def reset_backend() -> None:
    """Forget the resolved backend so the env variable is re-read."""
    global _active, _namespace
    _active = None
    _namespace = None
