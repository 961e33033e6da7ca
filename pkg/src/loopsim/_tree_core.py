"""Compiled kernels for MAE-criterion regression trees and Huber boosting.

The split search scores a candidate by the sum of the children's absolute
deviations about their own medians (SAD). For one feature pass the SAD of
every prefix (and suffix) is produced by deleting rows one at a time from
a doubly-linked list laid over the node's y-sorted order while tracking
the median pointer and the running sums around it, so each element costs
O(1) and a pass is linear after the node's single y-argsort.

Feature columns are argsorted once per fit; node partitions keep each
feature's row list sorted, so no sorting happens inside the node loop.
The boosting driver ``gbr_core`` runs the full iteration (delta quantile,
pseudo-residual tree, Huber leaf re-fit, prediction update, loss check)
without returning to Python.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1

# status codes returned by gbr_core
GBR_OK = 0
GBR_LOSS_INCREASE = 1


@njit(cache=True)
def _sad_by_deletion(posbuf, m, ysorted, slow0, total, prevb, nextb, out, backward, stop_at):
    """SADs of x-ordered prefixes (backward=True) or suffixes of a node.

    ``posbuf[i]`` is the y-sorted position of the row at x-position i.
    Deleting rows in reverse x-order leaves every prefix in turn; forward
    order leaves every suffix. out[c-1] receives the SAD of the surviving
    c rows; entries below ``stop_at - 1`` are never needed and the pass
    stops early. The median pointer moves at most one list hop per
    deletion, so a full pass is O(m).
    """
    for i in range(m):
        prevb[i] = i - 1
        nextb[i] = i + 1
    c = m
    h = (c + 1) // 2
    med = h - 1  # y-sorted position of the lower median
    slow = slow0
    tot = total
    out[m - 1] = tot - 2.0 * slow + ysorted[med] * (2 * h - c)
    for step in range(m - stop_at):
        if backward:
            p = posbuf[m - 1 - step]
        else:
            p = posbuf[step]
        v = ysorted[p]
        pn = nextb[p]
        pp = prevb[p]
        if pp >= 0:
            nextb[pp] = pn
        if pn < m:
            prevb[pn] = pp
        even = (c & 1) == 0  # h keeps its value exactly when c was even
        if p < med:
            slow -= v
            if even:
                med = nextb[med]
                slow += ysorted[med]
        elif p > med:
            if not even:
                slow -= ysorted[med]
                med = prevb[med]
        else:
            slow -= v
            if even:
                med = pn
                slow += ysorted[med]
            else:
                med = pp
        tot -= v
        c -= 1
        h = (c + 1) // 2
        out[c - 1] = tot - 2.0 * slow + ysorted[med] * (2 * h - c)


@njit(cache=True)
def _quantile_sorted(a, m, q):
    """Linear-interpolation quantile of the ascending values a[:m]."""
    if m == 1:
        return a[0]
    h = (m - 1) * q
    lo = int(h)
    if lo >= m - 1:
        return a[m - 1]
    frac = h - lo
    return a[lo] + frac * (a[lo + 1] - a[lo])


@njit(cache=True)
def _tree_cap(n, max_depth, min_leaf):
    max_leaves = max(1, n // max(1, min_leaf))
    cap = 2 * max_leaves - 1
    if max_depth < 30:
        by_depth = 2 ** (max_depth + 1) - 1
        if by_depth < cap:
            cap = by_depth
    return cap


@njit(cache=True)
def _build_tree_ws(
    X,
    y,
    sidx,
    n,
    max_depth,
    min_leaf,
    feature,
    threshold,
    left,
    right,
    value,
    count,
    stack,
    xs,
    zb,
    ysorted,
    psum,
    pre,
    suf,
    posbuf,
    prevb,
    nextb,
    rowrank,
    part,
    part2,
):
    """Greedy exact MAE tree over the rows listed in ``sidx``.

    ``sidx[f, :n]`` must list the node's rows ascending by feature f; the
    partition step preserves that ordering for both children, so nothing
    is re-sorted inside the loop. All outputs and scratch are
    caller-provided; returns the number of nodes written.
    """
    d = X.shape[1]
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 0
    n_nodes = 1

    while top >= 0:
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        depth = stack[top, 3]
        top -= 1
        m = hi - lo

        feature[node] = LEAF
        for i in range(m):
            zb[i] = y[sidx[0, lo + i]]
        order = np.argsort(zb[:m])
        acc = 0.0
        for i in range(m):
            pos = order[i]
            v = zb[pos]
            ysorted[i] = v
            acc += v
            psum[i] = acc
            rowrank[sidx[0, lo + pos]] = i
        h0 = (m + 1) // 2
        med0 = ysorted[h0 - 1]
        node_sad = psum[m - 1] - 2.0 * psum[h0 - 1] + med0 * (2 * h0 - m)
        value[node] = 0.5 * (ysorted[(m - 1) // 2] + ysorted[m // 2])
        count[node] = m

        if depth >= max_depth or m < 2 * min_leaf or node_sad <= 0.0:
            continue

        best_score = node_sad
        best_f = -1
        best_thr = 0.0
        for f in range(d):
            for i in range(m):
                row = sidx[f, lo + i]
                xs[i] = X[row, f]
                posbuf[i] = rowrank[row]
            _sad_by_deletion(
                posbuf, m, ysorted, psum[h0 - 1], psum[m - 1],
                prevb, nextb, pre, True, min_leaf,
            )
            _sad_by_deletion(
                posbuf, m, ysorted, psum[h0 - 1], psum[m - 1],
                prevb, nextb, suf, False, min_leaf,
            )
            for pos in range(min_leaf, m - min_leaf + 1):
                a = xs[pos - 1]
                b = xs[pos]
                if a < b:
                    score = pre[pos - 1] + suf[m - pos - 1]
                    if score < best_score:
                        thr = 0.5 * (a + b)
                        if thr >= b:  # midpoint rounded up to b
                            thr = a
                        best_score = score
                        best_f = f
                        best_thr = thr

        if best_f < 0:
            continue

        # stable partition of every feature's row list on the predicate,
        # so children stay sorted per feature
        nl = 0
        for f in range(d):
            nl = 0
            nr = 0
            for i in range(lo, hi):
                row = sidx[f, i]
                if X[row, best_f] <= best_thr:
                    part[nl] = row
                    nl += 1
                else:
                    part2[nr] = row
                    nr += 1
            for i in range(nl):
                sidx[f, lo + i] = part[i]
            for i in range(nr):
                sidx[f, lo + nl + i] = part2[i]

        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild

        top += 1
        stack[top, 0] = lchild
        stack[top, 1] = lo
        stack[top, 2] = lo + nl
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rchild
        stack[top, 1] = lo + nl
        stack[top, 2] = hi
        stack[top, 3] = depth + 1

    return n_nodes


@njit(cache=True)
def build_tree(X, y, idx, max_depth, min_leaf):
    """Greedy exact MAE tree over the rows listed in ``idx``.

    Returns (feature, threshold, left, right, value, count, n_nodes).
    feature[k] == LEAF marks a leaf; value[k] is the node median; count[k]
    the number of training rows that reached the node.
    """
    n = idx.shape[0]
    d = X.shape[1]
    cap = _tree_cap(n, max_depth, min_leaf)

    feature = np.full(cap, LEAF, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, np.int64)
    right = np.full(cap, LEAF, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)

    nrows = X.shape[0]
    sidx = np.empty((d, n), np.int64)
    xs = np.empty(n)
    for f in range(d):
        for i in range(n):
            xs[i] = X[idx[i], f]
        order = np.argsort(xs[:n])
        for i in range(n):
            sidx[f, i] = idx[order[i]]

    zb = np.empty(n)
    ysorted = np.empty(n)
    psum = np.empty(n)
    pre = np.empty(n)
    suf = np.empty(n)
    posbuf = np.empty(n, np.int64)
    prevb = np.empty(n, np.int64)
    nextb = np.empty(n, np.int64)
    rowrank = np.empty(nrows, np.int64)
    part = np.empty(n, np.int64)
    part2 = np.empty(n, np.int64)
    stack = np.empty((cap + 2, 4), np.int64)

    n_nodes = _build_tree_ws(
        X, y, sidx, n, max_depth, min_leaf,
        feature, threshold, left, right, value, count,
        stack, xs, zb, ysorted, psum, pre, suf,
        posbuf, prevb, nextb, rowrank, part, part2,
    )

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
        n_nodes,
    )


@njit(cache=True)
def tree_predict(feature, threshold, left, right, value, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]


@njit(cache=True)
def tree_apply(feature, threshold, left, right, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node


@njit(cache=True)
def forest_predict(feature, threshold, left, right, value, n_nodes, init, lr, X, out):
    """Sum of ``init + lr * tree_t(x)`` over the packed tree slabs."""
    n_trees = feature.shape[0]
    for i in range(X.shape[0]):
        acc = init
        for t in range(n_trees):
            node = 0
            while feature[t, node] != LEAF:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += lr * value[t, node]
        out[i] = acc


@njit(cache=True)
def huber_location(r, delta, knots):
    """Exact minimizer of sum_i huber_delta(r_i - c) over constants c.

    The derivative psi(c) = sum_i clip(r_i - c, -delta, delta) is a
    nonincreasing piecewise-linear function with knots at r_i ± delta;
    the root is found by scanning knots and interpolating. ``knots`` is
    scratch of length >= 2 len(r).
    """
    m = r.shape[0]
    if delta <= 0.0:
        srt = knots[:m]
        for i in range(m):
            srt[i] = r[i]
        srt.sort()
        return 0.5 * (srt[(m - 1) // 2] + srt[m // 2])
    kn = knots[: 2 * m]
    for i in range(m):
        kn[i] = r[i] - delta
        kn[m + i] = r[i] + delta
    kn.sort()

    prev_c = kn[0]
    prev_psi = 0.0
    for i in range(m):
        v = r[i] - prev_c
        if v > delta:
            v = delta
        elif v < -delta:
            v = -delta
        prev_psi += v
    if prev_psi <= 0.0:
        return prev_c
    for j in range(1, 2 * m):
        c = kn[j]
        if c == prev_c:
            continue
        psi = 0.0
        for i in range(m):
            v = r[i] - c
            if v > delta:
                v = delta
            elif v < -delta:
                v = -delta
            psi += v
        if psi <= 0.0:
            if psi == prev_psi:
                return c
            return prev_c + (c - prev_c) * prev_psi / (prev_psi - psi)
        prev_c = c
        prev_psi = psi
    return kn[2 * m - 1]


@njit(cache=True)
def _leaf_refit(feature, n_nodes, leaf_ids, resid, delta, value, buf, knots):
    """Overwrite each leaf's value with the exact Huber location of the
    true residuals routed to it."""
    n = leaf_ids.shape[0]
    for node in range(n_nodes):
        if feature[node] != LEAF:
            continue
        k = 0
        for i in range(n):
            if leaf_ids[i] == node:
                buf[k] = resid[i]
                k += 1
        if k > 0:
            value[node] = huber_location(buf[:k], delta, knots)


@njit(cache=True)
def huber_loss_mean(resid, delta):
    m = resid.shape[0]
    total = 0.0
    for i in range(m):
        a = abs(resid[i])
        if a <= delta:
            total += 0.5 * a * a
        else:
            total += delta * (a - 0.5 * delta)
    return total / m


@njit(cache=True)
def gbr_core(X, y, Xval, ckpts, n_estimators, learning_rate, max_depth, min_leaf, q, keep_forest):
    """Full Huber boosting loop.

    Per iteration: delta = q-quantile of |residuals|, tree fit to the
    clipped-gradient pseudo-residuals, leaves re-fit to the exact Huber
    location of the true residuals, predictions updated, and the training
    Huber loss (at this iteration's delta) checked to be non-increasing.

    ``Xval`` rows are scored incrementally; after iteration t the running
    validation predictions are snapshotted for every checkpoint equal to
    t + 1 (tree count). With ``keep_forest`` false the tree slabs hold a
    single reused row, which is how cross-validation scores a whole
    n_estimators ladder from one fit.

    Returns (feature, threshold, left, right, value, count, n_nodes,
    initial_value, loss_path, train_pred, val_pred_at_ckpts, status,
    bad_iteration).
    """
    n, d = X.shape
    mval = Xval.shape[0]
    nck = ckpts.shape[0]
    cap = _tree_cap(n, max_depth, min_leaf)
    rows = n_estimators if keep_forest else min(n_estimators, 1)

    feat2 = np.full((rows, cap), LEAF, np.int64)
    thr2 = np.zeros((rows, cap))
    left2 = np.full((rows, cap), LEAF, np.int64)
    right2 = np.full((rows, cap), LEAF, np.int64)
    val2 = np.zeros((rows, cap))
    cnt2 = np.zeros((rows, cap), np.int64)
    nn = np.zeros(n_estimators, np.int64)
    loss_path = np.zeros((n_estimators, 2))
    val_out = np.zeros((nck, mval))

    init = np.median(y)
    pred = np.full(n, init)
    val_pred = np.full(mval, init)

    # feature order is data-determined, so sort once and reuse every tree
    root_sidx = np.empty((d, n), np.int64)
    xs = np.empty(n)
    for f in range(d):
        for i in range(n):
            xs[i] = X[i, f]
        order = np.argsort(xs[:n])
        for i in range(n):
            root_sidx[f, i] = order[i]

    sidx = np.empty((d, n), np.int64)
    zb = np.empty(n)
    ysorted = np.empty(n)
    psum = np.empty(n)
    pre = np.empty(n)
    suf = np.empty(n)
    posbuf = np.empty(n, np.int64)
    prevb = np.empty(n, np.int64)
    nextb = np.empty(n, np.int64)
    rowrank = np.empty(n, np.int64)
    part = np.empty(n, np.int64)
    part2 = np.empty(n, np.int64)
    stack = np.empty((cap + 2, 4), np.int64)
    resid = np.empty(n)
    pseudo = np.empty(n)
    abuf = np.empty(n)
    leaf_ids = np.empty(n, np.int64)
    buf = np.empty(n)
    knots = np.empty(2 * n)

    status = GBR_OK
    bad_iter = -1
    nxt = 0
    while nxt < nck and ckpts[nxt] == 0:
        for j in range(mval):
            val_out[nxt, j] = val_pred[j]
        nxt += 1

    for t in range(n_estimators):
        row = t if keep_forest else 0

        for i in range(n):
            resid[i] = y[i] - pred[i]
            abuf[i] = abs(resid[i])
        asub = abuf[:n]
        asub.sort()
        delta = _quantile_sorted(abuf, n, q)

        loss_before = huber_loss_mean(resid, delta)
        for i in range(n):
            v = resid[i]
            if v > delta:
                v = delta
            elif v < -delta:
                v = -delta
            pseudo[i] = v

        for f in range(d):
            for i in range(n):
                sidx[f, i] = root_sidx[f, i]
        ft = feat2[row]
        tt = thr2[row]
        lt = left2[row]
        rt = right2[row]
        vt = val2[row]
        ct = cnt2[row]
        n_nodes = _build_tree_ws(
            X, pseudo, sidx, n, max_depth, min_leaf,
            ft, tt, lt, rt, vt, ct,
            stack, xs, zb, ysorted, psum, pre, suf,
            posbuf, prevb, nextb, rowrank, part, part2,
        )
        nn[t] = n_nodes

        for i in range(n):
            node = 0
            while ft[node] != LEAF:
                if X[i, ft[node]] <= tt[node]:
                    node = lt[node]
                else:
                    node = rt[node]
            leaf_ids[i] = node
        _leaf_refit(ft, n_nodes, leaf_ids, resid, delta, vt, buf, knots)

        for i in range(n):
            pred[i] += learning_rate * vt[leaf_ids[i]]

        loss_after = 0.0
        for i in range(n):
            a = abs(y[i] - pred[i])
            if a <= delta:
                loss_after += 0.5 * a * a
            else:
                loss_after += delta * (a - 0.5 * delta)
        loss_after /= n
        loss_path[t, 0] = loss_before
        loss_path[t, 1] = loss_after
        if loss_after > loss_before + 1e-9 * max(1.0, loss_before):
            status = GBR_LOSS_INCREASE
            bad_iter = t
            break

        for j in range(mval):
            node = 0
            while ft[node] != LEAF:
                if Xval[j, ft[node]] <= tt[node]:
                    node = lt[node]
                else:
                    node = rt[node]
            val_pred[j] += learning_rate * vt[node]
        while nxt < nck and ckpts[nxt] == t + 1:
            for j in range(mval):
                val_out[nxt, j] = val_pred[j]
            nxt += 1

    return (
        feat2, thr2, left2, right2, val2, cnt2, nn,
        init, loss_path, pred, val_out, status, bad_iter,
    )
