"""Backend selection for the simplex-QP kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``SCMTRANSMIT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("SCMTRANSMIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

project_simplex = _impl.project_simplex
solve_simplex_qp = _impl.solve_simplex_qp

__all__ = ["BACKEND", "project_simplex", "solve_simplex_qp"]
