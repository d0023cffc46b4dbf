"""Straight-line reference implementations used as test oracles.

Nothing here imports the package's tape or kernels; everything is written
out element by element so it cannot share a bug with the code under test.
"""

import math

import mpmath

N_CLASSES = 3


def softmax_mp(values, dps=40):
    with mpmath.workdps(dps):
        ex = [mpmath.e ** mpmath.mpf(v) for v in values]
        total = sum(ex)
        return [float(x / total) for x in ex]


def softmax_loop(values):
    top = max(values)
    ex = [math.exp(v - top) for v in values]
    total = sum(ex)
    return [x / total for x in ex]


def bigcn_dense(H, A, W, b, bidirectional=True):
    """relu(([A H ; A^T H] / (deg+1)) W + b), one scalar at a time."""
    n = len(H)
    d = len(H[0])
    out = []
    for i in range(n):
        deg = sum(1 for j in range(n) if j != i and A[i][j] != 0)
        fwd = [sum(A[i][j] * H[j][c] for j in range(n)) for c in range(d)]
        feats = fwd
        if bidirectional:
            bwd = [sum(A[j][i] * H[j][c] for j in range(n)) for c in range(d)]
            feats = fwd + bwd
        feats = [f / (deg + 1) for f in feats]
        row = []
        for c in range(len(W[0])):
            z = sum(feats[k] * W[k][c] for k in range(len(feats))) + b[c]
            row.append(max(z, 0.0))
        out.append(row)
    return out


def retrieval_alpha(H_ctx, H_mask):
    n = len(H_ctx)
    beta = []
    for i in range(n):
        total = 0.0
        for j in range(n):
            total += sum(a * c for a, c in zip(H_ctx[i], H_mask[j]))
        beta.append(total)
    return softmax_loop(beta)


def fuse(H_ctx, alpha, Z, W_proj):
    width = len(H_ctx[0])
    n = len(H_ctx)
    pooled = [sum(Z[t][k] for t in range(len(Z))) / len(Z) for k in range(len(Z[0]))]
    res = []
    for c in range(width):
        att = sum(alpha[i] * H_ctx[i][c] for i in range(n))
        proj = sum(pooled[k] * W_proj[k][c] for k in range(len(pooled)))
        res.append(att + proj)
    return res


def confusion_brute(preds, golds):
    C = [[0] * N_CLASSES for _ in range(N_CLASSES)]
    for p, g in zip(preds, golds):
        C[g][p] += 1
    return C


def metrics_brute(preds, golds):
    """(accuracy, macro_f1) from an explicitly counted confusion matrix."""
    C = confusion_brute(preds, golds)
    total = sum(sum(row) for row in C)
    acc = sum(C[k][k] for k in range(N_CLASSES)) / total
    f1s = []
    for k in range(N_CLASSES):
        tp = C[k][k]
        fp = sum(C[g][k] for g in range(N_CLASSES)) - tp
        fn = sum(C[k]) - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return acc, sum(f1s) / N_CLASSES
