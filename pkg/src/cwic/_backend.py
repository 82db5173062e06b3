"""Select the kernel backend at import.

The compiled extension is preferred; set ``CWIC_PURE_PYTHON=1`` to force
the numpy/pure-Python fallback.
"""

import os

from cwic import _pykernels

python_kernels = _pykernels
compiled_kernels = None

if not os.environ.get("CWIC_PURE_PYTHON"):
    try:
        from cwic import _ckernels as compiled_kernels
    except ImportError:
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"
