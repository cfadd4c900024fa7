"""Pick the compiled kernels when importable, else the numpy fallback.

Set CFFONT_FORCE_PYTHON=1 to force the fallback.
"""
import os

from . import _fallback

compiled = None
if not os.environ.get("CFFONT_FORCE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

kernels = compiled if compiled is not None else _fallback
NAME = "cython" if compiled is not None else "numpy"

project_batch = kernels.project_batch
scatter_bins = kernels.scatter_bins
adam_update = kernels.adam_update
