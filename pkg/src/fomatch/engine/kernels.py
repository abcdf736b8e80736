"""Backend selection for the batch kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. ``FOMATCH_BACKEND=python`` forces the fallback.
"""

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

DEFAULT = "python" if os.environ.get("FOMATCH_BACKEND") == "python" or _compiled is None else "compiled"


def get(name=None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
