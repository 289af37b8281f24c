"""Decision-tree build and traversal kernels.

Trees are grown with Gini impurity, uniform random feature subsets per
split, and optional bootstrap resampling.  Split candidates are midpoints
between consecutive distinct sorted feature values; children must each hold
at least ``min_samples_leaf`` samples.  Leaves store class frequency
distributions.

All randomness flows through an explicit splitmix64 state seeded per tree,
so a tree is a pure function of (X, y, params, seed) regardless of thread
scheduling.  Kernels are numba-compiled with nogil so tree training can run
on a thread pool.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _splitmix64(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31)), state


@njit(cache=True, nogil=True)
def build_tree(X, y, n_classes, max_depth, min_samples_leaf, features_per_split,
               bootstrap, seed):
    """Grow one tree; returns compact node arrays.

    Output: (feature, threshold, left, right, leaf_ref, leaf_dist) where
    feature[i] == -1 marks a leaf and leaf_ref[i] indexes its distribution
    row.  Node 0 is the root; children are numbered in creation order.
    """
    n, n_feat = X.shape
    state = np.uint64(seed)

    idx = np.empty(n, dtype=np.int64)
    if bootstrap:
        for i in range(n):
            z, state = _splitmix64(state)
            idx[i] = np.int64(z % np.uint64(n))
    else:
        for i in range(n):
            idx[i] = i

    max_nodes = 2 * n + 1
    max_leaves = n + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    leaf_ref = np.full(max_nodes, -1, dtype=np.int32)
    leaf_dist = np.zeros((max_leaves, n_classes), dtype=np.float64)
    n_nodes = 1
    n_leaves = 0

    # DFS stack of (node_id, segment start, segment end, depth) over idx
    stack = np.empty((max_nodes, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1

    counts = np.zeros(n_classes, dtype=np.int64)
    left_counts = np.zeros(n_classes, dtype=np.int64)
    feat_pool = np.empty(n_feat, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)
    buf = np.empty(n, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        size = end - start

        for k in range(n_classes):
            counts[k] = 0
        for p in range(start, end):
            counts[y[idx[p]]] += 1
        n_present = 0
        for k in range(n_classes):
            if counts[k] > 0:
                n_present += 1

        best_feat = -1
        best_thr = 0.0
        if depth < max_depth and size >= 2 * min_samples_leaf and n_present > 1:
            for f in range(n_feat):
                feat_pool[f] = f
            m = features_per_split if features_per_split < n_feat else n_feat
            for i in range(m):
                z, state = _splitmix64(state)
                j = i + np.int64(z % np.uint64(n_feat - i))
                tmp = feat_pool[i]
                feat_pool[i] = feat_pool[j]
                feat_pool[j] = tmp

            # maximize sum(left_k^2)/n_left + sum(right_k^2)/n_right,
            # equivalent to minimizing the weighted Gini of the split
            best_score = -1.0
            for fi in range(m):
                f = feat_pool[fi]
                for p in range(size):
                    vals[p] = X[idx[start + p], f]
                order = np.argsort(vals[:size])
                for k in range(n_classes):
                    left_counts[k] = 0
                sl = 0.0
                sr = 0.0
                for k in range(n_classes):
                    sr += float(counts[k]) * float(counts[k])
                for p in range(size - 1):
                    c = y[idx[start + order[p]]]
                    cl = left_counts[c]
                    cr = counts[c] - cl
                    sl += 2.0 * cl + 1.0
                    sr += 1.0 - 2.0 * cr
                    left_counts[c] = cl + 1
                    nl = p + 1
                    nr = size - nl
                    if nl < min_samples_leaf or nr < min_samples_leaf:
                        continue
                    v_here = vals[order[p]]
                    v_next = vals[order[p + 1]]
                    if v_next <= v_here:
                        continue
                    score = sl / nl + sr / nr
                    if score > best_score:
                        best_score = score
                        best_feat = f
                        best_thr = 0.5 * (v_here + v_next)

        if best_feat < 0:
            row = n_leaves
            n_leaves += 1
            leaf_ref[node] = row
            inv = 1.0 / size
            for k in range(n_classes):
                leaf_dist[row, k] = counts[k] * inv
            continue

        # stable partition of the segment: x < threshold goes left
        for p in range(size):
            buf[p] = idx[start + p]
        w = start
        for p in range(size):
            if X[buf[p], best_feat] < best_thr:
                idx[w] = buf[p]
                w += 1
        mid = w
        for p in range(size):
            if X[buf[p], best_feat] >= best_thr:
                idx[w] = buf[p]
                w += 1

        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = left_id
        right[node] = right_id
        stack[top, 0] = right_id
        stack[top, 1] = mid
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = left_id
        stack[top, 1] = start
        stack[top, 2] = mid
        stack[top, 3] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf_ref[:n_nodes].copy(),
        leaf_dist[:n_leaves].copy(),
    )


@njit(cache=True, nogil=True)
def forest_scores(feature, threshold, left, right, leaf_ref, leaf_dist, roots, X):
    """Average per-tree leaf distributions for each row of X.

    Node arrays are the concatenation of all trees (indices pre-offset);
    trees are accumulated in fixed index order so results are bit-identical
    regardless of how training or callers are threaded.
    """
    n = X.shape[0]
    n_classes = leaf_dist.shape[1]
    n_trees = roots.shape[0]
    out = np.zeros((n, n_classes), dtype=np.float64)
    for i in range(n):
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            row = leaf_ref[node]
            for k in range(n_classes):
                out[i, k] += leaf_dist[row, k]
    inv = 1.0 / n_trees
    for i in range(n):
        for k in range(n_classes):
            out[i, k] *= inv
    return out
