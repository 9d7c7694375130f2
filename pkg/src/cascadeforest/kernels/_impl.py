"""Hot-loop kernel implementations.

Every function in this module is written in the numba-nopython subset and is
self-contained (no calls into other module functions), so the exact same
source runs either JIT-compiled (`kernels._numba`) or as plain Python, the
fallback selected via the ``CF_BACKEND`` environment variable. Determinism
requirements:

* sorting uses stable mergesort so both backends produce identical
  permutations for tied feature values,
* per-split feature subsets come from an inline splitmix64 stream on uint64,
  which wraps identically under numba and numpy scalar arithmetic,
* all floating-point accumulation is sequential in a fixed order.

Tree layout produced by the growers: parallel arrays indexed by node id with
``feature == -1`` marking leaves. ``value0/value1`` hold the (normal, anomaly)
weighted class proportions for classification nodes and the (leaf value, 0)
pair for regression leaves. ``n_train`` is the training-row count (bootstrap
multiplicities included) reaching the node.
"""

import numpy as np


def grow_tree_cls(X, w, cnt, y, max_depth, min_samples_leaf, k_features, seed):
    """Grow one binary classification tree by weighted Gini reduction.

    X : (m, d) float64 rows for this tree (already gathered/bootstrapped)
    w : (m,) float64 impurity weights, all > 0 rows only
    cnt : (m,) int64 row multiplicities (bootstrap counts; 1 elsewhere)
    y : (m,) int64 labels in {0, 1}
    max_depth : int64, -1 for unlimited
    k_features : int64 features examined per split; == d disables sampling
    seed : uint64 splitmix64 stream seed (consumed only when k_features < d)

    Splits are exact midpoints between consecutive distinct sorted values;
    ties in gain resolve to the lowest (feature, threshold). Nodes are emitted
    in preorder. Returns (feature, threshold, left, right, value0, value1,
    n_train) trimmed to the node count.
    """
    m, d = X.shape
    cap = 2 * m
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value0 = np.zeros(cap, np.float64)
    value1 = np.zeros(cap, np.float64)
    n_train = np.zeros(cap, np.int64)

    idx = np.arange(m)
    buf = np.empty(m, np.int64)
    vals = np.empty(m, np.float64)
    perm = np.empty(d, np.int64)

    # DFS stack; right child pushed first so emission order is preorder.
    smax = m + 2
    st_lo = np.empty(smax, np.int64)
    st_hi = np.empty(smax, np.int64)
    st_depth = np.empty(smax, np.int64)
    st_parent = np.empty(smax, np.int64)
    st_side = np.empty(smax, np.int64)
    sp = 0
    st_lo[sp] = 0
    st_hi[sp] = m
    st_depth[sp] = 0
    st_parent[sp] = -1
    st_side[sp] = 0
    sp += 1

    state = np.uint64(seed)
    mix_inc = np.uint64(0x9E3779B97F4A7C15)
    mix_m1 = np.uint64(0xBF58476D1CE4E5B9)
    mix_m2 = np.uint64(0x94D049BB133111EB)
    s30 = np.uint64(30)
    s27 = np.uint64(27)
    s31 = np.uint64(31)

    n_nodes = 0
    while sp > 0:
        sp -= 1
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        side = st_side[sp]

        slot = n_nodes
        n_nodes += 1
        if parent >= 0:
            if side == 0:
                left[parent] = slot
            else:
                right[parent] = slot

        w_norm = 0.0
        w_anom = 0.0
        c_rows = 0
        has_n = False
        has_a = False
        for t in range(lo, hi):
            r = idx[t]
            if y[r] == 1:
                w_anom += w[r]
                has_a = True
            else:
                w_norm += w[r]
                has_n = True
            c_rows += cnt[r]
        w_tot = w_norm + w_anom
        n_train[slot] = c_rows
        value0[slot] = w_norm / w_tot
        value1[slot] = w_anom / w_tot

        depth_ok = max_depth < 0 or depth < max_depth
        if (hi - lo) < 2 or c_rows < 2 * min_samples_leaf or not (has_n and has_a) or not depth_ok:
            continue

        if k_features >= d:
            nf = d
            for i in range(d):
                perm[i] = i
        else:
            for i in range(d):
                perm[i] = i
            for j in range(k_features):
                state = state + mix_inc
                z = state
                z = (z ^ (z >> s30)) * mix_m1
                z = (z ^ (z >> s27)) * mix_m2
                z = z ^ (z >> s31)
                pick = j + np.int64(z % np.uint64(d - j))
                tmp = perm[j]
                perm[j] = perm[pick]
                perm[pick] = tmp
            nf = k_features
            # ascending feature order so equal-gain ties pick the lowest index
            for i in range(1, nf):
                key = perm[i]
                p = i - 1
                while p >= 0 and perm[p] > key:
                    perm[p + 1] = perm[p]
                    p -= 1
                perm[p + 1] = key

        base = (w_norm * w_norm + w_anom * w_anom) / w_tot
        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        m_node = hi - lo
        for fi in range(nf):
            f = perm[fi]
            for j in range(m_node):
                vals[j] = X[idx[lo + j], f]
            order = np.argsort(vals[:m_node], kind="mergesort")
            if vals[order[0]] == vals[order[m_node - 1]]:
                continue
            acc_n = 0.0
            acc_a = 0.0
            acc_c = 0
            prev = vals[order[0]]
            for p in range(1, m_node):
                r = idx[lo + order[p - 1]]
                if y[r] == 1:
                    acc_a += w[r]
                else:
                    acc_n += w[r]
                acc_c += cnt[r]
                v_here = vals[order[p]]
                if v_here > prev:
                    c_l = acc_c
                    c_r = c_rows - acc_c
                    w_l = acc_n + acc_a
                    w_r = w_tot - w_l
                    if c_l >= min_samples_leaf and c_r >= min_samples_leaf and w_l > 0.0 and w_r > 0.0:
                        rem_n = w_norm - acc_n
                        rem_a = w_anom - acc_a
                        score = (acc_n * acc_n + acc_a * acc_a) / w_l + (rem_n * rem_n + rem_a * rem_a) / w_r
                        gain = score - base
                        if gain > best_gain:
                            mid = prev + (v_here - prev) * 0.5
                            if mid >= v_here:
                                mid = prev
                            best_gain = gain
                            best_feat = f
                            best_thr = mid
                prev = v_here

        if best_feat < 0:
            continue

        # stable two-pass partition keeps relative row order on both sides
        n_l = 0
        for t in range(lo, hi):
            r = idx[t]
            if X[r, best_feat] <= best_thr:
                buf[lo + n_l] = r
                n_l += 1
        n_r = 0
        for t in range(lo, hi):
            r = idx[t]
            if X[r, best_feat] > best_thr:
                buf[lo + n_l + n_r] = r
                n_r += 1
        for t in range(lo, hi):
            idx[t] = buf[t]

        feature[slot] = best_feat
        threshold[slot] = best_thr
        st_lo[sp] = lo + n_l
        st_hi[sp] = hi
        st_depth[sp] = depth + 1
        st_parent[sp] = slot
        st_side[sp] = 1
        sp += 1
        st_lo[sp] = lo
        st_hi[sp] = lo + n_l
        st_depth[sp] = depth + 1
        st_parent[sp] = slot
        st_side[sp] = 0
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value0[:n_nodes].copy(),
        value1[:n_nodes].copy(),
        n_train[:n_nodes].copy(),
    )


def grow_tree_reg_presorted(X, sort_idx, grad, hess, max_depth, min_samples_leaf):
    """Grow one regression tree on presorted features (boosting stages).

    X : (n, d) float64 full training matrix
    sort_idx : (d, n) int64, rows of X in ascending order per feature; shared
        across stages because boosting never resamples rows
    grad : (n,) float64 per-row targets (negative gradients)
    hess : (n,) float64 per-row curvature; leaf value = sum(grad)/sum(hess)
    max_depth : int64 >= 1

    Level-wise exact split search: each feature pass walks the global sorted
    order once, accumulating per-node prefix sums, so a stage costs O(d*n) per
    level instead of O(d*n log n). Split criterion is variance reduction;
    ties resolve to the lowest (feature, threshold). Returns node arrays
    (level order, not preorder) plus the final leaf id of every row.
    """
    n, d = X.shape
    cap = 2 * n
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value0 = np.zeros(cap, np.float64)
    value1 = np.zeros(cap, np.float64)
    n_train = np.zeros(cap, np.int64)

    node_of = np.zeros(n, np.int64)
    lvl_lo = 0
    lvl_hi = 1
    n_nodes = 1
    depth = 0
    while lvl_lo < lvl_hi:
        nl = lvl_hi - lvl_lo
        tot_g = np.zeros(nl, np.float64)
        tot_c = np.zeros(nl, np.int64)
        g_min = np.empty(nl, np.float64)
        g_max = np.empty(nl, np.float64)
        for i in range(nl):
            g_min[i] = np.inf
            g_max[i] = -np.inf
        for row in range(n):
            nd = node_of[row] - lvl_lo
            if nd >= 0:
                g = grad[row]
                tot_g[nd] += g
                tot_c[nd] += 1
                if g < g_min[nd]:
                    g_min[nd] = g
                if g > g_max[nd]:
                    g_max[nd] = g

        splittable = np.zeros(nl, np.bool_)
        any_split = False
        for i in range(nl):
            if depth < max_depth and tot_c[i] >= 2 * min_samples_leaf and g_max[i] > g_min[i]:
                splittable[i] = True
                any_split = True

        best_gain = np.zeros(nl, np.float64)
        best_feat = np.full(nl, -1, np.int64)
        best_thr = np.zeros(nl, np.float64)
        if any_split:
            acc_g = np.zeros(nl, np.float64)
            acc_c = np.zeros(nl, np.int64)
            prev = np.zeros(nl, np.float64)
            for f in range(d):
                for i in range(nl):
                    acc_g[i] = 0.0
                    acc_c[i] = 0
                for p in range(n):
                    row = sort_idx[f, p]
                    nd = node_of[row] - lvl_lo
                    if nd < 0 or not splittable[nd]:
                        continue
                    v = X[row, f]
                    if acc_c[nd] > 0 and v > prev[nd]:
                        c_l = acc_c[nd]
                        c_r = tot_c[nd] - c_l
                        if c_l >= min_samples_leaf and c_r >= min_samples_leaf:
                            s_l = acc_g[nd]
                            s_r = tot_g[nd] - s_l
                            score = s_l * s_l / c_l + s_r * s_r / c_r
                            gain = score - tot_g[nd] * tot_g[nd] / tot_c[nd]
                            if gain > best_gain[nd]:
                                mid = prev[nd] + (v - prev[nd]) * 0.5
                                if mid >= v:
                                    mid = prev[nd]
                                best_gain[nd] = gain
                                best_feat[nd] = f
                                best_thr[nd] = mid
                    acc_g[nd] += grad[row]
                    acc_c[nd] += 1
                    prev[nd] = v

        created = False
        for i in range(nl):
            nd = lvl_lo + i
            n_train[nd] = tot_c[i]
            if best_feat[i] >= 0:
                feature[nd] = best_feat[i]
                threshold[nd] = best_thr[i]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
                created = True
        if created:
            for row in range(n):
                nd = node_of[row]
                if nd >= lvl_lo and feature[nd] >= 0:
                    if X[row, feature[nd]] <= threshold[nd]:
                        node_of[row] = left[nd]
                    else:
                        node_of[row] = right[nd]
        lvl_lo = lvl_hi
        lvl_hi = n_nodes
        depth += 1

    sum_g = np.zeros(n_nodes, np.float64)
    sum_h = np.zeros(n_nodes, np.float64)
    for row in range(n):
        nd = node_of[row]
        sum_g[nd] += grad[row]
        sum_h[nd] += hess[row]
    for nd in range(n_nodes):
        if feature[nd] < 0 and sum_h[nd] > 0.0:
            value0[nd] = sum_g[nd] / sum_h[nd]

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value0[:n_nodes].copy(),
        value1[:n_nodes].copy(),
        n_train[:n_nodes].copy(),
        node_of,
    )


def forest_raw_scores(feature, threshold, left, right, value0, value1, offsets, weights, X, method):
    """Accumulate raw per-row scores over a flattened forest.

    The forest is the concatenation of per-tree node arrays with child indices
    already globalized; tree t spans [offsets[t], offsets[t+1]). method 0
    (bagging) accumulates weight * (value0, value1); method 1 (additive
    boosting) accumulates weight * value0 into column 0; method 2 (weighted
    vote) adds the tree weight to the column of the leaf's majority class,
    anomaly winning exact ties.
    """
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros((n, 2), np.float64)
    for i in range(n):
        s0 = 0.0
        s1 = 0.0
        for t in range(n_trees):
            node = offsets[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            wt = weights[t]
            if method == 0:
                s0 += wt * value0[node]
                s1 += wt * value1[node]
            elif method == 1:
                s0 += wt * value0[node]
            else:
                if value1[node] >= value0[node]:
                    s1 += wt
                else:
                    s0 += wt
        out[i, 0] = s0
        out[i, 1] = s1
    return out
