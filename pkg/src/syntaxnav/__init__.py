"""Syntax-aware instruction-following navigation at desk scale."""

import os as _os

# Thread caps must be in place before numpy loads its BLAS.
_threads = _os.environ.get("SYNTAXNAV_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
