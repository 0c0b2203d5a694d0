"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``OPFBENCH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("OPFBENCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

dsbus_dv = _impl.dsbus_dv
d2sbus_dv2 = _impl.d2sbus_dv2
step_to_boundary = _impl.step_to_boundary
comp_dot = _impl.comp_dot
