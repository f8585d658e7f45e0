"""Pick the chained-equations kernel at import time.

The compiled ``_csweep`` extension is used when it imports; otherwise, or
when ``MULTISTAGE_MI_BACKEND=python`` is set, the numpy kernel is used.
"""

import os

from . import _sweep_py

python_run_chain = _sweep_py.run_chain
compiled_run_chain = None
try:
    from ._csweep import run_chain as compiled_run_chain
except ImportError:  # pragma: no cover - depends on the build
    pass

if compiled_run_chain is not None and os.environ.get("MULTISTAGE_MI_BACKEND", "").lower() != "python":
    run_chain = compiled_run_chain
    BACKEND = "cython"
else:
    run_chain = python_run_chain
    BACKEND = "python"
