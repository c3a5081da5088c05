"""Pure numpy implementations of the hot kernels.

Semantics are identical to the compiled ``_kernels`` module; the test suite
cross-checks the two backends.
"""

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)

TIE_RTOL = 1e-10


def _mix64(z):
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


def feature_keys(tree_seed, node_counter, n_features):
    """Pseudo-random 64-bit key per feature for one node's candidate draw."""
    with np.errstate(over="ignore"):
        base = _mix64(_U64(tree_seed) ^ _mix64(_U64(node_counter) + _GOLDEN))
        feats = np.arange(n_features, dtype=np.uint64)
        return _mix64(base + (feats + _U64(1)) * _GOLDEN)


def candidate_features(tree_seed, node_counter, n_features, k):
    """The ``k`` features with the smallest keys, in ascending feature order."""
    keys = feature_keys(tree_seed, node_counter, n_features)
    if k >= n_features:
        return np.arange(n_features)
    threshold = np.partition(keys, k - 1)[k - 1]
    return np.nonzero(keys <= threshold)[0]


def _popcount_rows(words):
    as_bytes = words.view(np.uint8).reshape(words.shape[0], -1)
    return np.unpackbits(as_bytes, axis=1).sum(axis=1, dtype=np.int64)


def _unpack(words):
    as_bytes = words.view(np.uint8).reshape(words.shape[0], -1)
    return np.unpackbits(as_bytes, axis=1, bitorder="little").astype(np.float64)


def pairwise_hamming(a, b):
    fa, fb = _unpack(a), _unpack(b)
    inter = (fa @ fb.T).astype(np.int64)
    return _popcount_rows(a)[:, None] + _popcount_rows(b)[None, :] - 2 * inter


def pairwise_tanimoto(a, b):
    fa, fb = _unpack(a), _unpack(b)
    inter = (fa @ fb.T).astype(np.int64)
    union = _popcount_rows(a)[:, None] + _popcount_rows(b)[None, :] - inter
    out = np.ones(inter.shape, dtype=np.float64)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def _seq_mean(values):
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def build_tree(X, y, samples, max_features, min_samples_leaf, tree_seed):
    """Grow one regression tree on binary features.

    ``samples`` lists training rows (bootstrap draws, duplicates allowed).
    Nodes are expanded depth first, left (bit clear) before right (bit set);
    the node counter used to draw candidate features follows that order.
    Returns ``(feature, left, right, value)`` arrays; leaves have feature -1.
    """
    n_features = X.shape[1]
    feature, left, right, value = [], [], [], []

    def new_node():
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.asarray(samples, dtype=np.int64))]
    counter = 0
    while stack:
        node, idx = stack.pop()
        yy = y[idx]
        value[node] = _seq_mean(yy.tolist())
        n = len(idx)
        if n < 2 * min_samples_leaf or yy.max() == yy.min():
            continue
        cands = candidate_features(tree_seed, counter, n_features, max_features)
        counter += 1
        sub = X[np.ix_(idx, cands)].astype(np.float64)
        n1 = sub.sum(axis=0)
        s1 = yy @ sub
        total = yy.sum()
        n0 = n - n1
        s0 = total - s1
        ok = (n1 >= min_samples_leaf) & (n0 >= min_samples_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = s1 * s1 / n1 + s0 * s0 / n0 - total * total / n
        best_f, best_gain = -1, 0.0
        for f, g, valid in zip(cands.tolist(), gain.tolist(), ok.tolist()):
            if not valid:
                continue
            if g > best_gain + TIE_RTOL * max(1.0, abs(best_gain)):
                best_f, best_gain = f, g
        if best_f < 0:
            continue
        mask = X[idx, best_f] != 0
        feature[node] = best_f
        lnode = new_node()
        rnode = new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[mask]))
        stack.append((lnode, idx[~mask]))
    return (
        np.array(feature, dtype=np.int64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


def tree_predict(feature, left, right, value, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        f = feature[node[r]]
        go_right = X[r, f] != 0
        node[r] = np.where(go_right, right[node[r]], left[node[r]])
        active = feature[node] >= 0
    return value[node]
