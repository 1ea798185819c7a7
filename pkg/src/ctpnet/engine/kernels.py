"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise, or when
``CTPN_KERNELS=python`` is set, the numpy implementation is used.
"""
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

if os.environ.get("CTPN_KERNELS", "").lower() == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")
        _impl = _pykernels
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
