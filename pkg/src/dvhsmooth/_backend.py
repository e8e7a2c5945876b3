"""Pick the compiled grid kernels when importable, else the numpy ones.

Set ``DVHSMOOTH_BACKEND=python`` to force the fallback.  ``DVHSMOOTH_THREADS``
caps the OpenMP threads used by the compiled kernels; results do not depend
on it.
"""

import os

from . import _kernels_py

NAME = "python"
_compiled = None
if os.environ.get("DVHSMOOTH_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled

        NAME = "cython"
    except ImportError:
        _compiled = None


def num_threads() -> int:
    raw = os.environ.get("DVHSMOOTH_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def level_sums(*args, backend=None):
    if _use_compiled(backend):
        return _compiled.level_sums(*args, num_threads=num_threads())
    return _kernels_py.level_sums(*args)


def power_sums(*args, backend=None):
    if _use_compiled(backend):
        return _compiled.power_sums(*args, num_threads=num_threads())
    return _kernels_py.power_sums(*args)


field_extrema = _kernels_py.field_extrema


def _use_compiled(backend):
    if backend == "python":
        return False
    if backend == "cython" and _compiled is None:
        raise ImportError("compiled kernels are not built")
    return _compiled is not None
