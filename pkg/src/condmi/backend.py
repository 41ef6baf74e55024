"""Kernel backend selection.

The compiled extension (``condmi._speedups``) is preferred when it built;
otherwise the pure-numpy kernels are used. Set ``CONDMI_BACKEND=python``
or ``CONDMI_BACKEND=compiled`` to force a choice, or use :func:`use` to
switch temporarily (benchmarks, cross-backend tests).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _python_kernels


def _load_compiled():
    try:
        from . import _speedups
    except ImportError:
        return None
    return _speedups


_COMPILED = _load_compiled()

_forced = os.environ.get("CONDMI_BACKEND")
if _forced is None or _forced == "":
    _active = _COMPILED if _COMPILED is not None else _python_kernels
elif _forced == "python":
    _active = _python_kernels
elif _forced == "compiled":
    if _COMPILED is None:
        raise ImportError(
            "CONDMI_BACKEND=compiled but the condmi._speedups extension is not built"
        )
    _active = _COMPILED
else:
    raise ImportError(
        f"unknown CONDMI_BACKEND={_forced!r} (expected 'python' or 'compiled')"
    )


def kernels():
    """The kernel module currently in effect."""
    return _active


def active_backend() -> str:
    return _active.NAME


def available_backends() -> list[str]:
    names = []
    if _COMPILED is not None:
        names.append("compiled")
    names.append("python")
    return names


def get_kernels(name: str):
    if name == "python":
        return _python_kernels
    if name == "compiled":
        if _COMPILED is None:
            raise ValueError("the compiled backend is not available in this install")
        return _COMPILED
    raise ValueError(f"unknown backend {name!r}")


@contextmanager
def use(name: str):
    """Force a specific backend within a ``with`` block."""
    global _active
    previous = _active
    _active = get_kernels(name)
    try:
        yield _active
    finally:
        _active = previous
