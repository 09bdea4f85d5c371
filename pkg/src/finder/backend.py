"""Kernel backend selection.

Hot inner loops (1D convolution and max-pooling, forward and backward) exist
twice: numba ``@njit`` kernels in ``_kernels_numba`` and vectorized numpy
fallbacks in ``_kernels_numpy``. The active set is chosen by the
``FINDER_BACKEND`` environment variable (``auto`` | ``numba`` | ``numpy``,
default ``auto``) or programmatically via :func:`set_backend`.

``numpy`` is the strict sequential mode: no JIT, evaluation order fixed by the
written expressions, bit-exact across runs. Neither backend uses intra-op
parallelism; they agree to floating-point reassociation (~1e-6 relative).
"""

import os

from .errors import ConfigError

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_VALID = ("auto", "numba", "numpy")
_forced: str | None = None


def set_backend(name: str | None) -> None:
    """Force a backend (``numba``/``numpy``), or pass None to re-read the env."""
    global _forced
    if name is not None and name not in _VALID:
        raise ConfigError(f"unknown backend {name!r}; expected one of {_VALID}")
    _forced = name


def backend_name() -> str:
    """Resolved backend: 'numba' or 'numpy'."""
    choice = _forced if _forced is not None else os.environ.get("FINDER_BACKEND", "auto")
    if choice not in _VALID:
        raise ConfigError(f"FINDER_BACKEND={choice!r}; expected one of {_VALID}")
    if choice == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if choice == "numba" and not HAS_NUMBA:
        raise ConfigError("FINDER_BACKEND=numba but numba is not importable")
    return choice


def kernels():
    """The active kernel module (lazy import keeps numba JIT off the numpy path)."""
    if backend_name() == "numba":
        from . import _kernels_numba as mod
    else:
        from . import _kernels_numpy as mod
    return mod
