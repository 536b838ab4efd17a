"""Backend selection for the hot contrast kernel.

The compiled extension is preferred; the numpy fallback is used when the
extension failed to build or ``UNICON_PURE_PYTHON`` is set to a truthy value.
"""

import os

from . import _kernels_py

BACKEND = "python"
contrast_rows = _kernels_py.contrast_rows

if os.environ.get("UNICON_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        contrast_rows = _kernels.contrast_rows
        BACKEND = "cython"

__all__ = ["BACKEND", "contrast_rows"]
