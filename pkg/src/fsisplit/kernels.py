"""Element-kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``FSISPLIT_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

from . import _kernels_py

if os.environ.get("FSISPLIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
strain_at_qp = _impl.strain_at_qp
viscous_element = _impl.viscous_element
