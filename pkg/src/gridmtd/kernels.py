"""Backend selection for the EXP3 kernels.

The compiled extension is used when it was built; set ``GRIDMTD_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
selfplay = _kernels_py.selfplay
player_update = _kernels_py.player_update

if os.environ.get("GRIDMTD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        selfplay = _kernels.selfplay


def backends() -> dict:
    """Available ``selfplay`` implementations keyed by name."""
    out = {"python": _kernels_py.selfplay}
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return out
    out["cython"] = _kernels.selfplay
    return out
