"""Backend selection for the merge kernels.

The compiled extension is used when it was built; otherwise the numpy
reference implementation is used. Set ``MERGESEARCH_PURE=1`` to force the
fallback.
"""
import os

BACKEND = "python"

if os.environ.get("MERGESEARCH_PURE", "") not in ("", "0"):
    from ._pykernels import batch_merge, dd_add, dd_finish, dd_start
else:
    try:
        from ._ckernels import batch_merge, dd_add, dd_finish, dd_start
        BACKEND = "cython"
    except ImportError:
        from ._pykernels import batch_merge, dd_add, dd_finish, dd_start

__all__ = ["BACKEND", "batch_merge", "dd_add", "dd_finish", "dd_start"]
