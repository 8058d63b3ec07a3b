"""Kernel selection: the compiled extension when it imports, the pure-Python
reference otherwise. ``SNTORSION_PURE_PYTHON=1`` forces the fallback."""

from __future__ import annotations

import os

from . import _kernel_py

if os.environ.get("SNTORSION_PURE_PYTHON", "") not in ("", "0"):
    run_heun = _kernel_py.run_heun
    BACKEND = "python"
else:
    try:
        from ._kernel import run_heun  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        run_heun = _kernel_py.run_heun
        BACKEND = "python"

run_heun_python = _kernel_py.run_heun
MODE_OFF = _kernel_py.MODE_OFF
MODE_QUADRATIC = _kernel_py.MODE_QUADRATIC
MODE_NONQUADRATIC = _kernel_py.MODE_NONQUADRATIC

__all__ = ["run_heun", "run_heun_python", "BACKEND", "MODE_OFF", "MODE_QUADRATIC", "MODE_NONQUADRATIC"]
