"""Console-script shim.

Applies RESADAPT_THREADS to the BLAS thread-count variables before numpy
loads, then dispatches to the CLI.  The kernels themselves are
single-threaded by design (results must not depend on worker count), so
this only caps library-level parallelism.
"""

import os
import sys


def main(argv=None) -> int:
    cap = os.environ.get("RESADAPT_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)
    from .cli import main as cli_main
    return cli_main(argv)


def console() -> None:
    sys.exit(main())
