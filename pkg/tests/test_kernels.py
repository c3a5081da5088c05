import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcnp import _fallback, chem, kernels

BACKENDS = kernels.backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def test_backend_reported():
    assert kernels.BACKEND in BACKENDS


def test_pure_python_switch():
    env = dict(os.environ, MOLCNP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from molcnp import kernels; print(kernels.BACKEND)"], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 63, 64, 65, 200]))
def test_pairwise_kernels_agree(seed, nbits):
    rng = np.random.default_rng(seed)
    a = chem.pack_bits((rng.random((7, nbits)) < rng.random()).astype(np.uint8))
    b = chem.pack_bits((rng.random((5, nbits)) < rng.random()).astype(np.uint8))
    fast = BACKENDS["cython"]
    assert np.array_equal(fast.pairwise_hamming(a, b), _fallback.pairwise_hamming(a, b))
    assert np.array_equal(fast.pairwise_tanimoto(a, b), _fallback.pairwise_tanimoto(a, b))


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 10_000), st.integers(1, 300))
def test_feature_draws_agree(tree_seed, node, n_features):
    fast = BACKENDS["cython"]
    assert np.array_equal(fast.feature_keys(tree_seed, node, n_features), _fallback.feature_keys(tree_seed, node, n_features))
    k = max(1, n_features // 3)
    assert np.array_equal(fast.candidate_features(tree_seed, node, n_features, k), _fallback.candidate_features(tree_seed, node, n_features, k))


@needs_cython
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_trees_agree(seed, min_leaf):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 60)), int(rng.integers(1, 24))
    X = (rng.random((n, d)) < 0.4).astype(np.uint8)
    # rounded labels make exactly tied gains common
    y = np.round(X @ rng.normal(size=d), 1)
    samples = rng.integers(0, n, size=n).astype(np.int64)
    k = int(rng.integers(1, d + 1))
    fast = BACKENDS["cython"].build_tree(X, y, samples, k, min_leaf, seed)
    slow = _fallback.build_tree(X, y, samples, k, min_leaf, seed)
    for a, b in zip(fast, slow):
        assert np.array_equal(a, b)
    Xq = (rng.random((10, d)) < 0.5).astype(np.uint8)
    assert np.array_equal(BACKENDS["cython"].tree_predict(*fast, Xq), _fallback.tree_predict(*slow, Xq))
