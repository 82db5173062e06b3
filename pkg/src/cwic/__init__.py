"""Learned image compression with importance-map bit allocation."""

import os as _os

# CWIC_THREADS caps BLAS pools; must be set before numpy loads them
if _os.environ.get("CWIC_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["CWIC_THREADS"])

from cwic._backend import BACKEND  # noqa: E402

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
