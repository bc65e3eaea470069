"""Kernel backend selection, done once at import.

Default: the compiled extension when it imported cleanly, else the numpy
fallback.  RESADAPT_BACKEND=compiled|numpy forces a choice (forcing
"compiled" without a built extension is an import error, not a silent
downgrade).  Both backends satisfy the same contracts; see
benchmarks/bench_kernels.py for the speed comparison.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("RESADAPT_BACKEND", "auto").strip().lower()
if _requested in ("", "auto"):
    _impl = _compiled if _compiled is not None else _kernels_py
elif _requested in ("compiled", "cython"):
    if _compiled is None:
        raise ImportError(
            "RESADAPT_BACKEND=compiled but the resadapt._kernels extension "
            "is not built; reinstall with a C compiler or unset the variable"
        )
    _impl = _compiled
elif _requested in ("numpy", "python"):
    _impl = _kernels_py
else:
    raise ImportError(
        f"unknown RESADAPT_BACKEND {_requested!r}; use 'auto', 'compiled' or 'numpy'"
    )

cosine_scores = _impl.cosine_scores
softmax_rows = _impl.softmax_rows
ce_loss_grad = _impl.ce_loss_grad


def backend_name() -> str:
    """Name of the kernel set in use: 'compiled' or 'numpy'."""
    return _impl.NAME


def available_backends() -> list[str]:
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names
