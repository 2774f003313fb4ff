"""Hot point-projection kernels.

The compiled Cython backend is used when it has been built; otherwise the
numpy twin is loaded. Set ``LIDARMOS_BACKEND=python`` to force the fallback.
"""

import importlib
import logging
import os

log = logging.getLogger(__name__)

_FORCE = os.environ.get("LIDARMOS_BACKEND", "").lower()


def _load():
    if _FORCE != "python":
        try:
            return importlib.import_module("._ckernels", __name__)
        except ImportError as exc:
            if _FORCE == "cython":
                raise
            log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
    return importlib.import_module("._pykernels", __name__)


backend = _load()
python_backend = importlib.import_module("._pykernels", __name__)


def compiled_backend():
    """The Cython module, or ``None`` when it was not built."""
    try:
        return importlib.import_module("._ckernels", __name__)
    except ImportError:
        return None


def available_backends():
    out = [python_backend]
    c = compiled_backend()
    if c is not None:
        out.insert(0, c)
    return out
