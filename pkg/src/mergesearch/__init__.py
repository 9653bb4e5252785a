"""Search-optimized linear merging of checkpoint pools."""

__version__ = "0.1.0"

from .errors import MergeSearchError  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "MergeSearchError", "__version__"]
