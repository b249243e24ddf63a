"""Hot kernels with backend selection at import.

The compiled extension ``_ckernels`` is used when it was built; otherwise
(or when ``SEMIPROTO_PURE_PYTHON`` is set) the numpy versions in
``_pykernels`` are used. ``BACKEND`` names the active one.
"""
import os

from semiproto import _pykernels

python_backend = _pykernels
cython_backend = None

try:
    from semiproto import _ckernels as cython_backend
except ImportError:  # extension not built
    cython_backend = None

if cython_backend is not None and not os.environ.get("SEMIPROTO_PURE_PYTHON"):
    _impl = cython_backend
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

sqdist = _impl.sqdist
sqdist_backward = _impl.sqdist_backward
log_softmax = _impl.log_softmax
log_softmax_backward = _impl.log_softmax_backward
column_stats = _impl.column_stats
nearest_index = _impl.nearest_index
conv3x3 = _impl.conv3x3
conv3x3_backward = _impl.conv3x3_backward
maxpool2 = _impl.maxpool2
maxpool2_backward = _impl.maxpool2_backward

DEGENERATE_VAR = _pykernels.DEGENERATE_VAR
