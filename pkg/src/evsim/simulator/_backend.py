"""Pick the compiled kernel when it is importable, else the numpy one.

Set ``EVSIM_BACKEND=python`` to force the fallback.
"""
import os

from . import _kernel_py

python_interval_events = _kernel_py.interval_events
compiled_interval_events = None

try:
    from ._kernel import interval_events as compiled_interval_events
except ImportError:  # extension not built
    pass

if compiled_interval_events is not None and os.environ.get("EVSIM_BACKEND", "").lower() != "python":
    BACKEND = "cython"
    interval_events = compiled_interval_events
else:
    BACKEND = "python"
    interval_events = python_interval_events


def get_kernel(name=None):
    """Kernel function by name (``"cython"``, ``"python"``) or the default."""
    if name is None:
        return interval_events
    if name == "python":
        return python_interval_events
    if name == "cython":
        if compiled_interval_events is None:
            raise ImportError("compiled kernel is not built")
        return compiled_interval_events
    raise ValueError(f"unknown backend {name!r}")
