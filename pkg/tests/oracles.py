"""Independent reference implementations the test suite checks against.

Everything here is deliberately naive (loops, direct formulas, O(F^2)
scans) and never shares code with the engine.
"""

import numpy as np


def matmul_loops(a, b):
    """Triple-loop matrix product in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def softmax_direct(x):
    """e^x / sum(e^x) evaluated directly in float64."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x)
    return e / e.sum()


def cross_entropy_direct(logits, labels, scale):
    """Mean -log p[label] with p = softmax(scale * logits), float64."""
    z = np.asarray(logits, dtype=np.float64) * scale
    total = 0.0
    for i, y in enumerate(labels):
        p = softmax_direct(z[i])
        total += -np.log(p[y])
    return total / len(labels)


def finite_difference(fn, arr, h=1e-5):
    """Central-difference gradient of fn() with respect to arr, in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        fp = fn()
        flat[i] = saved - h
        fm = fn()
        flat[i] = saved
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric, floor=1e-6):
    """Max |a-n| / max(|a|, |n|, floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def rank_of(scores, index):
    """1-based rank of item `index` under descending score, ties broken by
    ascending frame index. Counts every item ranked at-or-above it."""
    s = scores[index]
    r = 0
    for j in range(len(scores)):
        if scores[j] > s or (scores[j] == s and j <= index):
            r += 1
    return r


def _all_ranks(scores):
    """Rank of every item by pairwise comparison scans (O(F^2))."""
    return [rank_of(scores, i) for i in range(len(scores))]


def ap_bruteforce(scores, positives):
    """O(F^2) average precision: every rank comes from a full pairwise scan;
    precision at a positive's rank counts positives ranked at-or-above it."""
    ranks = _all_ranks(scores)
    pos_ranks = sorted(ranks[i] for i, p in enumerate(positives) if p)
    assert pos_ranks, "needs at least one positive"
    total = 0.0
    for tp, r in enumerate(pos_ranks, start=1):
        total += tp / r
    return total / len(pos_ranks)


def cap_bruteforce(scores, positives, w):
    """O(F^2) calibrated average precision applying w*TP/(w*TP+FP) at each
    positive's rank; FP == 0 gives precision 1 for any w."""
    ranks = _all_ranks(scores)
    pos_ranks = sorted(ranks[i] for i, p in enumerate(positives) if p)
    assert pos_ranks, "needs at least one positive"
    total = 0.0
    for tp, r in enumerate(pos_ranks, start=1):
        fp = r - tp
        total += 1.0 if fp == 0 else (w * tp) / (w * tp + fp)
    return total / len(pos_ranks)


def adamw_scalar(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0, p0=1.0):
    """Hand-stepped scalar AdamW trajectory: decoupled decay applied first,
    then the bias-corrected moment update. Returns the value after each step."""
    p = float(p0)
    m = 0.0
    v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p = p * (1.0 - lr * weight_decay)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(p)
    return out


def nearest_anchor_predictions(features, anchors):
    """Per-frame argmax of anchor dot products (the nearest-centroid rule)."""
    feats = np.asarray(features, dtype=np.float64)
    anc = np.asarray(anchors, dtype=np.float64)
    return np.argmax(feats @ anc.T, axis=1)
