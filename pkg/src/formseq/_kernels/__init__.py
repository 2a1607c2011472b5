"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension (``_speed``) is selected at import when available;
set ``FORMSEQ_NO_EXT=1`` to force the fallback. Both backends share the
same signatures and float64 arithmetic.
"""

import os

from . import _fallback

BACKEND = "fallback"
_impl = _fallback

if not os.environ.get("FORMSEQ_NO_EXT"):
    try:
        from . import _speed as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        pass

HYBRID = _fallback.HYBRID
TYPE_ONLY = _fallback.TYPE_ONLY
DIST_ONLY = _fallback.DIST_ONLY
HYBRID_STAR = _fallback.HYBRID_STAR
MASK = _fallback.MASK

bias_matrix = _impl.bias_matrix
bias_matrix_grads = _impl.bias_matrix_grads
lcs_length = _impl.lcs_length
