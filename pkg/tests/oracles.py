"""Brute-force reference implementations, deliberately independent of the package."""
import math
from fractions import Fraction

import numpy as np


def category_utility(s, h):
    n = len(s)
    ks, js = sorted(set(h)), sorted(set(s))
    total = Fraction(0)
    for k in ks:
        nk = sum(1 for x in h if x == k)
        inner = Fraction(0)
        for j in js:
            nkj = sum(1 for a, b in zip(h, s) if a == k and b == j)
            inner += Fraction(nkj, nk) ** 2
        total += Fraction(nk, n) * inner
    for j in js:
        total -= Fraction(sum(1 for x in s if x == j), n) ** 2
    return float(total)


def frobenius(s, h):
    """||S - H G||^2 via explicit per-cluster centroid loops."""
    K_prime = max(s) + 1
    total = 0.0
    for k in set(h):
        rows = [i for i, x in enumerate(h) if x == k]
        g = [sum(1.0 for i in rows if s[i] == j) / len(rows) for j in range(K_prime)]
        for i in rows:
            total += sum(((1.0 if s[i] == j else 0.0) - g[j]) ** 2 for j in range(K_prime))
    return total


def nmi(a, b):
    n = len(a)
    pa = {x: sum(1 for y in a if y == x) / n for x in set(a)}
    pb = {x: sum(1 for y in b if y == x) / n for x in set(b)}
    mi = 0.0
    for x in pa:
        for y in pb:
            pxy = sum(1 for u, v in zip(a, b) if u == x and v == y) / n
            if pxy > 0:
                mi += pxy * math.log(pxy / (pa[x] * pb[y]))
    ha = -sum(p * math.log(p) for p in pa.values())
    hb = -sum(p * math.log(p) for p in pb.values())
    if ha + hb == 0:
        return 1.0
    return 2 * mi / (ha + hb)


def spherical_kmeans(X, init, max_iter=300):
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    C = init / np.linalg.norm(init, axis=1, keepdims=True)
    labels = None
    for _ in range(max_iter):
        new = np.array([min(range(len(C)), key=lambda k: (1 - X[i] @ C[k], k))
                        for i in range(len(X))])
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = np.array([X[labels == k].sum(axis=0) for k in range(len(C))])
        C = C / np.linalg.norm(C, axis=1, keepdims=True)
    return labels


def rates(scores, labels, theta):
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        if s > theta:
            if y:
                tp += 1
            else:
                fp += 1
        else:
            if y:
                fn += 1
            else:
                tn += 1
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn,
            "far": fp / (fp + tn) if fp + tn else float("nan"),
            "fnr": fn / (fn + tp) if fn + tp else float("nan"),
            "tar": tp / (fn + tp) if fn + tp else float("nan"),
            "accuracy": (tp + tn) / len(scores)}


def threshold_for_far(imposters, target):
    for t in sorted(set(imposters)):
        if sum(1 for s in imposters if s > t) / len(imposters) <= target:
            return t
    raise AssertionError("unreachable")


def optimal_threshold(scores, labels):
    best = None
    for t in sorted(set(scores)):
        acc = rates(scores, labels, t)["accuracy"]
        if best is None or acc > best[1]:
            best = (t, acc)
    return best


def average_precision(order, relevant):
    hits, total = 0, 0.0
    for rank, s in enumerate(order, start=1):
        if s in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def first_hit(order, relevant):
    for rank, s in enumerate(order, start=1):
        if s in relevant:
            return rank
    return None


def cmc(lists, depth):
    firsts = [first_hit(order, rel) for order, rel in lists]
    return [sum(1 for f in firsts if f <= k) / len(lists) for k in range(1, depth + 1)]
