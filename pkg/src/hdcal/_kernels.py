"""Pick the compiled kernels when available, else the numpy fallback.

Set ``HDCAL_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("HDCAL_PURE_PYTHON", "") not in ("", "0"):
    from ._cd_py import cd_gram, cd_gram_path

    BACKEND = "python"
else:
    try:
        from ._cd import cd_gram, cd_gram_path

        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._cd_py import cd_gram, cd_gram_path

        BACKEND = "python"

__all__ = ["cd_gram", "cd_gram_path", "BACKEND"]
