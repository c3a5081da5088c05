"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback.  Set ``MOLCNP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from molcnp import _fallback

if os.environ.get("MOLCNP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from molcnp import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "python" if _impl is _fallback else "cython"

pairwise_hamming = _impl.pairwise_hamming
pairwise_tanimoto = _impl.pairwise_tanimoto
build_tree = _impl.build_tree
tree_predict = _impl.tree_predict
candidate_features = _impl.candidate_features
feature_keys = _impl.feature_keys


def backends():
    """All importable backends, keyed by name."""
    found = {"python": _fallback}
    try:
        from molcnp import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
