"""Compiled kernels for growing and applying classification trees.

Features arrive rank-encoded: ``codes[i, f]`` indexes the sorted distinct
values ``bin_values[f, :n_bins[f]]`` of feature ``f``. A split ``code <= b``
is stored with the real-valued threshold halfway between the largest value
sent left and the smallest value sent right within the node.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _split_score(mass_l, mass_r, K):
    pl = 0.0
    pr = 0.0
    sl = 0.0
    sr = 0.0
    for k in range(K):
        pl += mass_l[k]
        pr += mass_r[k]
        sl += mass_l[k] * mass_l[k]
        sr += mass_r[k] * mass_r[k]
    score = 0.0
    if pl > 0.0:
        score += pl - sl / pl
    if pr > 0.0:
        score += pr - sr / pr
    return score


@njit(cache=True, nogil=True)
def build_tree(codes, bin_values, n_bins, y, w, class_weight, K,
               min_split, min_leaf, max_depth, mtry, seed):
    """Grow one tree on the rows with positive weight.

    Returns node arrays (feature, split_code, threshold, left, right,
    counts, mass, depth). ``counts`` holds raw (weighted) class counts,
    ``mass`` the prior-weighted class scores used for impurity and leaf
    labels.
    """
    np.random.seed(seed)
    n, F = codes.shape
    n_active = 0
    for i in range(n):
        if w[i] > 0.0:
            n_active += 1
    idx = np.empty(n_active, dtype=np.int64)
    j = 0
    for i in range(n):
        if w[i] > 0.0:
            idx[j] = i
            j += 1

    cap = 2 * n_active + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    split_code = np.zeros(cap, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, K), dtype=np.float64)
    mass = np.zeros((cap, K), dtype=np.float64)
    depth = np.zeros(cap, dtype=np.int64)

    max_bins = bin_values.shape[1]
    hist_m = np.zeros((max_bins, K), dtype=np.float64)
    hist_c = np.zeros(max_bins, dtype=np.float64)
    mass_l = np.zeros(K, dtype=np.float64)
    mass_r = np.zeros(K, dtype=np.float64)
    perm = np.arange(F)
    buf_codes = np.empty(n_active, dtype=np.int64)

    # stack of (node, start, end)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    sp = 0
    n_nodes = 1
    if n_active > 0:
        st_node[0] = 0
        st_start[0] = 0
        st_end[0] = n_active
        sp = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]

        cnt = 0.0
        for t in range(start, end):
            i = idx[t]
            counts[node, y[i]] += w[i]
            mass[node, y[i]] += w[i] * class_weight[y[i]]
            cnt += w[i]
        p_node = 0.0
        sq = 0.0
        for k in range(K):
            p_node += mass[node, k]
            sq += mass[node, k] * mass[node, k]
        if p_node <= 0.0:
            continue
        node_score = p_node - sq / p_node
        if node_score <= 1e-14 * p_node:
            continue
        if cnt < min_split or cnt < 2 * min_leaf or depth[node] >= max_depth:
            continue

        # random feature order; the first mtry are mandatory, the rest are
        # consulted only while no admissible split has been found
        for a in range(F):
            perm[a] = a
        if mtry < F:
            for a in range(F - 1, 0, -1):
                b = np.random.randint(0, a + 1)
                tmp = perm[a]
                perm[a] = perm[b]
                perm[b] = tmp

        best_score = np.inf
        best_f = -1
        best_code = -1
        best_thr = 0.0
        n_node = end - start
        for a in range(F):
            if a >= mtry and best_f >= 0:
                break
            f = perm[a]
            nb = n_bins[f]
            if nb < 2:
                continue
            if nb <= 4 * n_node:
                for b in range(nb):
                    hist_c[b] = 0.0
                    for k in range(K):
                        hist_m[b, k] = 0.0
                for t in range(start, end):
                    i = idx[t]
                    c = codes[i, f]
                    hist_c[c] += w[i]
                    hist_m[c, y[i]] += w[i] * class_weight[y[i]]
                for k in range(K):
                    mass_l[k] = 0.0
                cnt_l = 0.0
                prev = -1
                for b in range(nb):
                    if hist_c[b] <= 0.0:
                        continue
                    if prev >= 0:
                        cnt_r = cnt - cnt_l
                        if cnt_l >= min_leaf and cnt_r >= min_leaf:
                            for k in range(K):
                                mass_r[k] = mass[node, k] - mass_l[k]
                            s = _split_score(mass_l, mass_r, K)
                            if s < best_score - 1e-12 * p_node or (
                                    abs(s - best_score) <= 1e-12 * p_node and f < best_f):
                                best_score = s
                                best_f = f
                                best_code = prev
                                best_thr = 0.5 * (bin_values[f, prev] + bin_values[f, b])
                    cnt_l += hist_c[b]
                    for k in range(K):
                        mass_l[k] += hist_m[b, k]
                    prev = b
            else:
                for t in range(n_node):
                    buf_codes[t] = codes[idx[start + t], f]
                order = np.argsort(buf_codes[:n_node], kind="mergesort")
                for k in range(K):
                    mass_l[k] = 0.0
                cnt_l = 0.0
                t = 0
                prev = -1
                while t < n_node:
                    c = buf_codes[order[t]]
                    if prev >= 0:
                        cnt_r = cnt - cnt_l
                        if cnt_l >= min_leaf and cnt_r >= min_leaf:
                            for k in range(K):
                                mass_r[k] = mass[node, k] - mass_l[k]
                            s = _split_score(mass_l, mass_r, K)
                            if s < best_score - 1e-12 * p_node or (
                                    abs(s - best_score) <= 1e-12 * p_node and f < best_f):
                                best_score = s
                                best_f = f
                                best_code = prev
                                best_thr = 0.5 * (bin_values[f, prev] + bin_values[f, c])
                    while t < n_node and buf_codes[order[t]] == c:
                        i = idx[start + order[t]]
                        cnt_l += w[i]
                        mass_l[y[i]] += w[i] * class_weight[y[i]]
                        t += 1
                    prev = c

        if best_f < 0:
            continue

        # partition idx[start:end] so rows with code <= best_code come first
        lo = start
        hi = end - 1
        while lo <= hi:
            if codes[idx[lo], best_f] <= best_code:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        mid = lo

        feature[node] = best_f
        split_code[node] = best_code
        threshold[node] = best_thr
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        depth[lchild] = depth[node] + 1
        depth[rchild] = depth[node] + 1
        # right pushed first so the left subtree is expanded first
        st_node[sp] = rchild
        st_start[sp] = mid
        st_end[sp] = end
        sp += 1
        st_node[sp] = lchild
        st_start[sp] = start
        st_end[sp] = mid
        sp += 1

    return (feature[:n_nodes].copy(), split_code[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), counts[:n_nodes].copy(),
            mass[:n_nodes].copy(), depth[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def apply_forest(X, feature, threshold, left, right, roots):
    """Leaf index of every row in every tree of a packed forest."""
    n = X.shape[0]
    B = roots.shape[0]
    out = np.empty((B, n), dtype=np.int64)
    for b in range(B):
        r = roots[b]
        for i in range(n):
            node = r
            while feature[node] != LEAF:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[b, i] = node
    return out


@njit(cache=True, nogil=True)
def vote_counts(leaves, leaf_label, K, mask):
    """Per-row vote counts over trees where ``mask[b, i]`` is true."""
    B, n = leaves.shape
    votes = np.zeros((n, K), dtype=np.int64)
    for b in range(B):
        for i in range(n):
            if mask[b, i]:
                votes[i, leaf_label[leaves[b, i]]] += 1
    return votes


@njit(cache=True, nogil=True)
def mean_prob(leaves, prob):
    B, n = leaves.shape
    K = prob.shape[1]
    out = np.zeros((n, K), dtype=np.float64)
    for b in range(B):
        for i in range(n):
            for k in range(K):
                out[i, k] += prob[leaves[b, i], k]
    return out / B
