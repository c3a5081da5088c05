"""Slow, independent reference implementations used as test oracles."""

from fractions import Fraction

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def reference_candidates(tree_seed, counter, n_features, k):
    base = splitmix(tree_seed ^ splitmix(counter + GOLDEN))
    keys = [(splitmix(base + (f + 1) * GOLDEN), f) for f in range(n_features)]
    return sorted(f for _, f in sorted(keys)[:k])


def reference_tree(X, y, rows, k, min_leaf, tree_seed):
    """Exhaustive split search with exact rational gains."""
    counter = [0]
    n_features = len(X[0])

    def sse(idx):
        vals = [Fraction(y[i]) for i in idx]
        mean = sum(vals) / len(vals)
        return sum((v - mean) ** 2 for v in vals)

    def grow(idx):
        total = 0.0
        for i in idx:
            total += y[i]
        leaf = {"value": total / len(idx)}
        if len(idx) < 2 * min_leaf or len({y[i] for i in idx}) == 1:
            return leaf
        cands = reference_candidates(tree_seed, counter[0], n_features, k)
        counter[0] += 1
        parent = sse(idx)
        best, best_gain = None, Fraction(0)
        for f in cands:
            lo = [i for i in idx if X[i][f] == 0]
            hi = [i for i in idx if X[i][f] == 1]
            if len(lo) < min_leaf or len(hi) < min_leaf:
                continue
            gain = parent - sse(lo) - sse(hi)
            if gain > best_gain:
                best, best_gain = f, gain
        if best is None:
            return leaf
        leaf["feature"] = best
        leaf["left"] = grow([i for i in idx if X[i][best] == 0])
        leaf["right"] = grow([i for i in idx if X[i][best] == 1])
        return leaf

    return grow(list(rows))


def reference_tree_predict(tree, x):
    while "feature" in tree:
        tree = tree["right"] if x[tree["feature"]] else tree["left"]
    return tree["value"]


def reference_neighbors(train_x, query, k, metric, ids):
    scored = []
    for j, row in enumerate(train_x):
        both = sum(1 for a, b in zip(row, query) if a and b)
        either = sum(1 for a, b in zip(row, query) if a or b)
        if metric == "hamming":
            key = sum(1 for a, b in zip(row, query) if a != b)
        else:
            key = -(Fraction(both, either) if either else Fraction(1))
        scored.append((key, ids[j], j))
    return [j for _, _, j in sorted(scored)[:k]]
