"""Brute-force refinement written with lists and ``math`` only.

Deliberately shares no code with the package: every loop is spelled out so
the results can serve as an independent reference.
"""
import math


def sqd(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def softmax(logits):
    top = max(logits)
    e = [math.exp(v - top) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def weighted_means(support, labels, unlabeled, weights, n):
    """Prototype c = (sum_i [y_i=c] h_i + sum_j w_jc u_j) / (count_c + sum_j w_jc)."""
    dim = len(support[0])
    out = []
    for c in range(n):
        num = [0.0] * dim
        den = 0.0
        for h, y in zip(support, labels):
            if y == c:
                num = [a + b for a, b in zip(num, h)]
                den += 1.0
        for u, w in zip(unlabeled, weights):
            num = [a + w[c] * b for a, b in zip(num, u)]
            den += w[c]
        out.append([v / den for v in num])
    return out


def soft_kmeans(support, labels, unlabeled, protos):
    n = len(protos)
    z = [softmax([-sqd(u, p) for p in protos]) for u in unlabeled]
    return weighted_means(support, labels, unlabeled, z, n)


def distractor_assignment(u, protos, r):
    """Responsibilities over N unit-scale clusters plus a cluster at 0 with scale r."""
    zero = [0.0] * len(u)
    logits = [-sqd(u, p) - (0.5 * math.log(2 * math.pi)) for p in protos]
    logits.append(-sqd(u, zero) / (r * r) - (0.5 * math.log(2 * math.pi) + math.log(r)))
    return softmax(logits)


def soft_kmeans_distractor(support, labels, unlabeled, protos, r):
    n = len(protos)
    z = [distractor_assignment(u, protos, r)[:n] for u in unlabeled]
    return weighted_means(support, labels, unlabeled, z, n)


def column_stats(values):
    m = len(values)
    mu = sum(values) / m
    var = sum((v - mu) ** 2 for v in values) / m
    if var < 1e-12:
        skew = kurt = 0.0
    else:
        skew = sum((v - mu) ** 3 for v in values) / m / var**1.5
        kurt = sum((v - mu) ** 4 for v in values) / m / var**2
    return [min(values), max(values), var, skew, kurt]


def mlp(stats, w1, b1, w2, b2):
    hidden = [math.tanh(sum(stats[i] * w1[i][k] for i in range(len(stats))) + b1[k]) for k in range(len(b1))]
    return [sum(hidden[k] * w2[k][o] for k in range(len(hidden))) + b2[o] for o in range(len(b2))]


def masks(unlabeled, protos, w1, b1, w2, b2):
    """Mask matrix m[j][c] from normalised distances and per-prototype (beta, gamma)."""
    n = len(protos)
    d = [[sqd(u, p) for p in protos] for u in unlabeled]
    out = [[0.0] * n for _ in unlabeled]
    for c in range(n):
        col = [row[c] for row in d]
        mean = sum(col) / len(col)
        dn = [v / mean for v in col] if mean != 0 else [1.0] * len(col)
        beta, gamma = mlp(column_stats(dn), w1, b1, w2, b2)
        for j, v in enumerate(dn):
            out[j][c] = 1.0 / (1.0 + math.exp(gamma * (v - beta)))
    return out


def masked_soft_kmeans(support, labels, unlabeled, protos, w1, b1, w2, b2):
    n = len(protos)
    m = masks(unlabeled, protos, w1, b1, w2, b2)
    z = [softmax([-sqd(u, p) for p in protos]) for u in unlabeled]
    w = [[z[j][c] * m[j][c] for c in range(n)] for j in range(len(unlabeled))]
    return weighted_means(support, labels, unlabeled, w, n)


def class_means(support, labels, n):
    return weighted_means(support, labels, [], [], n)
