"""Compiled tree growing and traversal.

Trees are stored as flat arrays indexed by node id. Each node covers a
contiguous segment of per-feature presorted row lists; splitting a node
stably partitions every list, so sorted order never has to be recomputed.
"""

import numpy as np
from numba import njit

GINI = 0
SSE = 1
EXCESS_CLASS = 7  # class index of rating 9, the modal manager rating

_REL_TOL = 1e-12


@njit(cache=True, nogil=True)
def _better(score, best, scale):
    return score > best + _REL_TOL * scale


@njit(cache=True, nogil=True)
def _lex_less(a, b):
    """True if the sorted level set encoded by bitmask ``a`` precedes ``b`` lexicographically."""
    d = a ^ b
    if d == 0:
        return False
    low = d & (-d)
    above = ~((low << 1) - 1)
    if a & low:
        # b continues with a larger element unless it stops here
        return (b & above) != 0
    return (a & above) == 0


@njit(cache=True, nogil=True)
def _canonical(mask, present_mask):
    """Left set always holds the lowest level present in the node."""
    low = present_mask & (-present_mask)
    if mask & low:
        return mask
    return present_mask & ~mask


@njit(cache=True, nogil=True)
def _gini_score(cnt, n_classes, w):
    s = 0.0
    for c in range(n_classes):
        s += cnt[c] * cnt[c]
    return s / w


@njit(cache=True, nogil=True)
def _scan_continuous(seg, xcol, y, w, g, mode, n_classes, min_node, tot_cnt, tot_w, tot_g,
                     left_cnt, best_score, scale):
    """Best midpoint threshold on one presorted column segment."""
    best_thr = np.nan
    found = False
    for c in range(n_classes):
        left_cnt[c] = 0.0
    lw = 0.0
    lg = 0.0
    lsq = 0.0
    rsq = 0.0
    if mode == GINI:
        for c in range(n_classes):
            rsq += tot_cnt[c] * tot_cnt[c]
    m = seg.shape[0]
    for i in range(m - 1):
        r = seg[i]
        wi = w[r]
        if mode == GINI:
            c = y[r]
            # incremental sums of squared class weights
            lsq += wi * (2.0 * left_cnt[c] + wi)
            rc = tot_cnt[c] - left_cnt[c]
            rsq -= wi * (2.0 * rc - wi)
            left_cnt[c] += wi
        else:
            lg += wi * g[r]
        lw += wi
        xa = xcol[r]
        xb = xcol[seg[i + 1]]
        if xa == xb:
            continue
        rw = tot_w - lw
        if lw < min_node or rw < min_node:
            continue
        if mode == GINI:
            score = lsq / lw + rsq / rw
        else:
            rg = tot_g - lg
            score = lg * lg / lw + rg * rg / rw
        if _better(score, best_score, scale):
            best_score = score
            thr = 0.5 * (xa + xb)
            if not (xa <= thr < xb):
                thr = xa
            best_thr = thr
            found = True
    return found, best_score, best_thr


@njit(cache=True, nogil=True)
def _scan_categorical(seg, xcol, y, w, g, mode, n_classes, n_lev, min_node, max_exhaustive,
                      best_score, scale):
    """Best level subset for one discrete column; returns (found, score, mask)."""
    cnt = np.zeros((n_lev, n_classes))
    lw_arr = np.zeros(n_lev)
    lg_arr = np.zeros(n_lev)
    for i in range(seg.shape[0]):
        r = seg[i]
        lv = int(xcol[r])
        lw_arr[lv] += w[r]
        if mode == GINI:
            cnt[lv, y[r]] += w[r]
        else:
            lg_arr[lv] += w[r] * g[r]
    present = np.empty(n_lev, dtype=np.int64)
    k = 0
    present_mask = np.int64(0)
    for lv in range(n_lev):
        if lw_arr[lv] > 0:
            present[k] = lv
            k += 1
            present_mask |= np.int64(1) << lv
    found = False
    best_mask = np.int64(0)
    if k < 2:
        return found, best_score, best_mask
    tot_w = 0.0
    tot_g = 0.0
    tot_cnt = np.zeros(n_classes)
    for j in range(k):
        lv = present[j]
        tot_w += lw_arr[lv]
        tot_g += lg_arr[lv]
        for c in range(n_classes):
            tot_cnt[c] += cnt[lv, c]
    lcnt = np.zeros(n_classes)
    if mode == GINI and n_lev <= max_exhaustive:
        # lowest present level pinned left; enumerate the other k-1 freely
        for sub in range((1 << (k - 1)) - 1):
            mask = np.int64(1) << present[0]
            for j in range(k - 1):
                if (sub >> j) & 1:
                    mask |= np.int64(1) << present[j + 1]
            lw = 0.0
            for c in range(n_classes):
                lcnt[c] = 0.0
            for j in range(k):
                lv = present[j]
                if (mask >> lv) & 1:
                    lw += lw_arr[lv]
                    for c in range(n_classes):
                        lcnt[c] += cnt[lv, c]
            rw = tot_w - lw
            if lw < min_node or rw < min_node:
                continue
            lsq = 0.0
            rsq = 0.0
            for c in range(n_classes):
                lsq += lcnt[c] * lcnt[c]
                rc = tot_cnt[c] - lcnt[c]
                rsq += rc * rc
            score = lsq / lw + rsq / rw
            if _better(score, best_score, scale):
                best_score, best_mask, found = score, mask, True
            elif found and abs(score - best_score) <= _REL_TOL * scale and _lex_less(mask, best_mask):
                best_mask = mask
        return found, best_score, best_mask

    # ordered-cut search: levels ranked by class-9 excess (Gini) or mean residual (SSE)
    key = np.empty(k)
    for j in range(k):
        lv = present[j]
        if mode == GINI:
            # share of the excess class; the node-level share is a common offset
            key[j] = cnt[lv, EXCESS_CLASS] / lw_arr[lv] if EXCESS_CLASS < n_classes else 0.0
        else:
            key[j] = lg_arr[lv] / lw_arr[lv]
    order = np.argsort(key, kind="mergesort")
    lw = 0.0
    lg = 0.0
    mask = np.int64(0)
    for c in range(n_classes):
        lcnt[c] = 0.0
    for j in range(k - 1):
        lv = present[order[j]]
        mask |= np.int64(1) << lv
        lw += lw_arr[lv]
        lg += lg_arr[lv]
        if mode == GINI:
            for c in range(n_classes):
                lcnt[c] += cnt[lv, c]
        rw = tot_w - lw
        if lw < min_node or rw < min_node:
            continue
        if mode == GINI:
            lsq = 0.0
            rsq = 0.0
            for c in range(n_classes):
                lsq += lcnt[c] * lcnt[c]
                rc = tot_cnt[c] - lcnt[c]
                rsq += rc * rc
            score = lsq / lw + rsq / rw
        else:
            rg = tot_g - lg
            score = lg * lg / lw + rg * rg / rw
        cmask = _canonical(mask, present_mask)
        if _better(score, best_score, scale):
            best_score, best_mask, found = score, cmask, True
        elif found and abs(score - best_score) <= _REL_TOL * scale and _lex_less(cmask, best_mask):
            best_mask = cmask
    return found, best_score, best_mask


@njit(cache=True, nogil=True)
def _node_stats(seg, y, w, g, h, mode, n_classes, cnt):
    tw = 0.0
    tg = 0.0
    th = 0.0
    for c in range(n_classes):
        cnt[c] = 0.0
    for i in range(seg.shape[0]):
        r = seg[i]
        tw += w[r]
        if mode == GINI:
            cnt[y[r]] += w[r]
        else:
            tg += w[r] * g[r]
            th += w[r] * h[r]
    return tw, tg, th


@njit(cache=True, nogil=True)
def _find_split(lists, start, end, X, is_cat, n_levels, cand, y, w, g, mode, n_classes,
                min_node, max_exhaustive, tot_cnt, tot_w, tot_g, parent_score):
    """Search candidate columns in ascending order; first strict improvement wins ties."""
    scale = max(1.0, abs(parent_score))
    best_score = parent_score
    best_f = -1
    best_thr = np.nan
    best_mask = np.int64(0)
    left_cnt = np.zeros(n_classes)
    for ci in range(cand.shape[0]):
        f = cand[ci]
        seg = lists[f, start:end]
        if is_cat[f]:
            ok, sc, mk = _scan_categorical(seg, X[:, f], y, w, g, mode, n_classes, n_levels[f],
                                           min_node, max_exhaustive, best_score, scale)
            if ok:
                best_score, best_f, best_mask, best_thr = sc, f, mk, np.nan
        else:
            ok, sc, thr = _scan_continuous(seg, X[:, f], y, w, g, mode, n_classes, min_node,
                                           tot_cnt, tot_w, tot_g, left_cnt, best_score, scale)
            if ok:
                best_score, best_f, best_thr, best_mask = sc, f, thr, np.int64(0)
    return best_f, best_thr, best_mask, best_score


@njit(cache=True, nogil=True)
def grow(X, is_cat, n_levels, order, w, y, g, h, mode, n_classes, min_node, max_depth, mtry,
         seed, max_exhaustive, hess_floor):
    """Grow one tree on rows with positive weight.

    ``order[f]`` is a stable argsort of ``X[:, f]`` over all rows. ``mtry``
    columns are drawn without replacement at every node. Returns flat node
    arrays; ``value`` holds class weights (GINI) or the Newton leaf step (SSE).
    """
    np.random.seed(seed)
    n, m = X.shape
    n_in = 0
    for i in range(n):
        if w[i] > 0:
            n_in += 1
    # with no predictors a single in-bag row list still carries the node segments
    n_lists = max(m, 1)
    lists = np.empty((n_lists, n_in), dtype=np.int64)
    for f in range(n_lists):
        k = 0
        for i in range(n):
            r = order[f, i] if m > 0 else i
            if w[r] > 0:
                lists[f, k] = r
                k += 1
    cap = 2 * n_in + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.full(cap, np.nan)
    cat_mask = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    n_node = np.zeros(cap)
    decrease = np.zeros(cap)
    vdim = n_classes if mode == GINI else 1
    value = np.zeros((cap, vdim))

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_in
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(n_in, dtype=np.int64)
    cnt = np.zeros(n_classes)
    pool = np.arange(m)
    cand = np.empty(min(mtry, m), dtype=np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        seg0 = lists[0, start:end]
        tw, tg, th = _node_stats(seg0, y, w, g, h, mode, n_classes, cnt)
        n_node[node] = tw
        if mode == GINI:
            for c in range(n_classes):
                value[node, c] = cnt[c]
            parent_score = _gini_score(cnt, n_classes, tw)
            pure = parent_score >= tw * (1.0 - 1e-12)
        else:
            value[node, 0] = tg / max(th, hess_floor)
            parent_score = tg * tg / tw
            pure = False
        if m == 0 or tw < 2 * min_node or depth == max_depth or pure:
            continue
        # fresh candidate draw per node, then ascending for tie-breaking
        k = cand.shape[0]
        if k >= m:
            for j in range(m):
                cand[j] = j
        else:
            for j in range(m):
                pool[j] = j
            for j in range(k):
                t = j + np.random.randint(0, m - j)
                tmp = pool[j]
                pool[j] = pool[t]
                pool[t] = tmp
            for j in range(k):
                cand[j] = pool[j]
            cand.sort()
        f, thr, mask, score = _find_split(lists, start, end, X, is_cat, n_levels, cand, y, w, g,
                                          mode, n_classes, min_node, max_exhaustive, cnt, tw, tg,
                                          parent_score)
        if f < 0 and mode == GINI:
            # impure node without a strictly improving split (XOR-like balance):
            # accept the first zero-gain split so deeper nodes can separate it
            f, thr, mask, score = _find_split(lists, start, end, X, is_cat, n_levels, cand, y, w, g,
                                              mode, n_classes, min_node, max_exhaustive, cnt, tw, tg,
                                              parent_score - 4.0 * _REL_TOL * max(1.0, abs(parent_score)))
            score = max(score, parent_score)
        if f < 0:
            continue
        # partition every presorted list stably
        n_left = 0
        for i in range(start, end):
            r = lists[0, i]
            if is_cat[f]:
                gl = (mask >> np.int64(X[r, f])) & 1 == 1
            else:
                gl = X[r, f] <= thr
            goes_left[r] = gl
            if gl:
                n_left += 1
        for ff in range(n_lists):
            a = start
            b = 0
            for i in range(start, end):
                r = lists[ff, i]
                if goes_left[r]:
                    lists[ff, a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for i in range(b):
                lists[ff, a + i] = buf[i]
        feature[node] = f
        threshold[node] = thr
        cat_mask[node] = mask
        decrease[node] = (score - parent_score) / tw
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        # push right first so the left subtree is processed next
        st_node[sp] = rid
        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lid
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), cat_mask[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), n_node[:n_nodes].copy(),
            decrease[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply(X, feature, threshold, cat_mask, is_cat, left, right):
    """Leaf id reached by every row of ``X``; unseen levels route right."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            if is_cat[f]:
                code = np.int64(X[i, f])
                go_left = code >= 0 and code < 63 and ((cat_mask[node] >> code) & 1) == 1
            else:
                go_left = X[i, f] <= threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def add_votes(leaf_ids, leaf_class, votes):
    for i in range(leaf_ids.shape[0]):
        votes[i, leaf_class[leaf_ids[i]]] += 1


@njit(cache=True, nogil=True)
def _descend(X, i, base, feature, threshold, cat_mask, is_cat, left, right):
    node = 0
    while feature[base + node] >= 0:
        k = base + node
        f = feature[k]
        if is_cat[f]:
            code = np.int64(X[i, f])
            go_left = code >= 0 and code < 63 and ((cat_mask[k] >> code) & 1) == 1
        else:
            go_left = X[i, f] <= threshold[k]
        node = left[k] if go_left else right[k]
    return base + node


@njit(cache=True, nogil=True)
def packed_votes(X, offsets, feature, threshold, cat_mask, is_cat, left, right, leaf_class, votes):
    """Accumulate one vote per tree; child ids are local to each tree."""
    n = X.shape[0]
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        for i in range(n):
            k = _descend(X, i, base, feature, threshold, cat_mask, is_cat, left, right)
            votes[i, leaf_class[k]] += 1


@njit(cache=True, nogil=True)
def packed_scores(X, offsets, feature, threshold, cat_mask, is_cat, left, right, leaf_value,
                  tree_class, scores):
    """scores[i, tree_class[t]] += leaf value reached by row i in tree t."""
    n = X.shape[0]
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        c = tree_class[t]
        for i in range(n):
            k = _descend(X, i, base, feature, threshold, cat_mask, is_cat, left, right)
            scores[i, c] += leaf_value[k]


@njit(cache=True, nogil=True)
def grow_hist(B, n_bins, bin_lo, bin_hi, is_cat, w, g, h, min_node, min_hess, max_depth, mtry, seed,
              hess_floor):
    """Squared-error tree on pre-binned columns (boosting).

    ``B[i, f]`` is the bin (continuous) or level (discrete) of row ``i``.
    Splitting after bin ``b`` of a continuous column sends ``code <= b`` left
    with a threshold midway between the largest value of ``b`` and the smallest
    value of the next bin that is nonempty in the node. Discrete levels are ordered
    by mean residual and the ordered cuts are scanned. Each child must carry
    at least ``min_node`` weight and ``min_hess`` hessian sum. Output layout matches
    ``grow`` in SSE mode.
    """
    np.random.seed(seed)
    n, m = B.shape
    rows = np.empty(n, dtype=np.int64)
    n_in = 0
    for i in range(n):
        if w[i] > 0:
            rows[n_in] = i
            n_in += 1
    cap = 2 * n_in + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.full(cap, np.nan)
    cat_mask = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    n_node = np.zeros(cap)
    decrease = np.zeros(cap)
    value = np.zeros((cap, 1))

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_in
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    max_b = 1
    for f in range(m):
        max_b = max(max_b, n_bins[f])
    hw = np.zeros(max_b)
    hg = np.zeros(max_b)
    hh = np.zeros(max_b)
    key = np.empty(max_b)
    lv_idx = np.empty(max_b, dtype=np.int64)
    buf = np.empty(n_in, dtype=np.int64)
    # node-local contiguous copies of w, w*g, w*h
    nw = np.empty(n_in)
    ng = np.empty(n_in)
    nh = np.empty(n_in)
    pool = np.arange(m)
    cand = np.empty(min(mtry, m), dtype=np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        tw = 0.0
        tg = 0.0
        th = 0.0
        for i in range(start, end):
            r = rows[i]
            j = i - start
            nw[j] = w[r]
            ng[j] = w[r] * g[r]
            nh[j] = w[r] * h[r]
            tw += nw[j]
            tg += ng[j]
            th += nh[j]
        n_node[node] = tw
        value[node, 0] = tg / max(th, hess_floor)
        parent = tg * tg / tw
        if m == 0 or tw < 2 * min_node or th < 2 * min_hess or depth == max_depth:
            continue
        k = cand.shape[0]
        if k >= m:
            for j in range(m):
                cand[j] = j
        else:
            for j in range(m):
                pool[j] = j
            for j in range(k):
                t = j + np.random.randint(0, m - j)
                tmp = pool[j]
                pool[j] = pool[t]
                pool[t] = tmp
            for j in range(k):
                cand[j] = pool[j]
            cand.sort()

        scale = max(1.0, abs(parent))
        best = parent
        best_f = -1
        best_b = -1
        best_next = -1
        best_mask = np.int64(0)
        for ci in range(k):
            f = cand[ci]
            nb = n_bins[f]
            for b in range(nb):
                hw[b] = 0.0
                hg[b] = 0.0
                hh[b] = 0.0
            for i in range(start, end):
                b = B[rows[i], f]
                j = i - start
                hw[b] += nw[j]
                hg[b] += ng[j]
                hh[b] += nh[j]
            if not is_cat[f]:
                lw = 0.0
                lg = 0.0
                lh = 0.0
                last = -1
                for b in range(nb):
                    if hw[b] <= 0:
                        continue
                    # a cut after the previous nonempty bin
                    if last >= 0:
                        rw = tw - lw
                        if lw >= min_node and rw >= min_node and lh >= min_hess and th - lh >= min_hess:
                            rg = tg - lg
                            score = lg * lg / lw + rg * rg / rw
                            if _better(score, best, scale):
                                best, best_f, best_b, best_mask = score, f, last, np.int64(0)
                                best_next = b
                    lw += hw[b]
                    lg += hg[b]
                    lh += hh[b]
                    last = b
            else:
                kk = 0
                present_mask = np.int64(0)
                for b in range(nb):
                    if hw[b] > 0:
                        lv_idx[kk] = b
                        key[kk] = hg[b] / hw[b]
                        kk += 1
                        present_mask |= np.int64(1) << b
                if kk < 2:
                    continue
                order = np.argsort(key[:kk], kind="mergesort")
                lw = 0.0
                lg = 0.0
                lh = 0.0
                mask = np.int64(0)
                found = False
                fbest = best
                fmask = np.int64(0)
                for j in range(kk - 1):
                    lv = lv_idx[order[j]]
                    mask |= np.int64(1) << lv
                    lw += hw[lv]
                    lg += hg[lv]
                    lh += hh[lv]
                    rw = tw - lw
                    if lw < min_node or rw < min_node or lh < min_hess or th - lh < min_hess:
                        continue
                    rg = tg - lg
                    score = lg * lg / lw + rg * rg / rw
                    cm = _canonical(mask, present_mask)
                    if _better(score, fbest, scale):
                        fbest, fmask, found = score, cm, True
                    elif found and abs(score - fbest) <= _REL_TOL * scale and _lex_less(cm, fmask):
                        fmask = cm
                if found:
                    best, best_f, best_b, best_mask = fbest, f, -1, fmask
        if best_f < 0:
            continue
        # partition rows of this node
        a = start
        nb_right = 0
        for i in range(start, end):
            r = rows[i]
            code = B[r, best_f]
            if is_cat[best_f]:
                gl = ((best_mask >> code) & 1) == 1
            else:
                gl = code <= best_b
            if gl:
                rows[a] = r
                a += 1
            else:
                buf[nb_right] = r
                nb_right += 1
        for i in range(nb_right):
            rows[a + i] = buf[i]
        n_left = a - start
        feature[node] = best_f
        if is_cat[best_f]:
            cat_mask[node] = best_mask
        else:
            lo = bin_hi[best_f, best_b]
            hi = bin_lo[best_f, best_next]
            thr = 0.5 * (lo + hi)
            if not (lo <= thr < hi):
                thr = lo
            threshold[node] = thr
        decrease[node] = (best - parent) / tw
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        st_node[sp] = rid
        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lid
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), cat_mask[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), n_node[:n_nodes].copy(),
            decrease[:n_nodes].copy(), value[:n_nodes].copy())
