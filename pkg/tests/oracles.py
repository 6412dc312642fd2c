"""Slow, loop-based reference computations shared by unit and acceptance tests.

Written directly from the scoring and selection formulas with plain Python
floats and full sorts; nothing here calls into tokenadapt's kernels.
"""

import math


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def cosine(a, b):
    na, nb = math.sqrt(dot(a, a)), math.sqrt(dot(b, b))
    if na == 0 or nb == 0:
        return 0.0
    return dot(a, b) / (na * nb)


def anchors(h, vis, txt):
    sims = [softmax([dot(h[v], h[t]) for t in txt]) for v in vis]
    align = [sum(row[j] for row in sims) / len(vis) for j in range(len(txt))]
    tau = sum(align) / len(align)
    chosen = [t for t, a in zip(txt, align) if a > tau]
    return chosen or list(txt), align, tau


def budget(nv, r, rho):
    from fractions import Fraction

    b = math.floor((1 - Fraction(str(r))) * nv + Fraction(1, 2))
    b = min(max(b, 1), nv)
    k_big = math.floor((1 - Fraction(str(rho))) * b)
    return b, k_big, b - k_big


def ranked(items):
    """Sort (value, position, index) by value desc then position asc."""
    return sorted(items, key=lambda x: (-x[0], x[1]))


def ilsa_decision(h, a_prune, modality, view, position, r, rho):
    """Full decision from the formulas: returns (global, recycle, final) as sets of row indices."""
    h = [list(map(float, row)) for row in h]
    vis = [i for i, m in enumerate(modality) if m == 0]
    txt = [i for i, m in enumerate(modality) if m == 1]
    rel, _, _ = anchors(h, vis, txt)
    scores = {i: sum(a_prune[t][i] for t in rel) / len(rel) for i in vis}
    b, k_big, k_small = budget(len(vis), r, rho)
    order = ranked([(scores[i], position[i], i) for i in vis])
    g = {i for _, _, i in order[:k_big]}
    rest = [i for i in vis if i not in g]
    div = {}
    for i in rest:
        same = [j for j in rest if view[j] == view[i] and j != i]
        if not same:
            div[i] = 1.0
        else:
            div[i] = 1.0 - sum(cosine(h[i], h[j]) for j in same) / len(same)
    k_small = min(k_small, len(rest))
    rec = {i for _, _, i in ranked([(div[i], position[i], i) for i in rest])[:k_small]}
    return g, rec, g | rec


def rms_normed(row, eps=1e-6):
    scale = 1.0 / math.sqrt(sum(v * v for v in row) / len(row) + eps)
    return [v * scale for v in row]


def prune_attention(x, wq, wk, heads):
    """Head-mean of softmax(q k^T / sqrt(hd)) with no rotation and no mask; x is already normed."""
    n, d = len(x), len(wq[0])
    hd = d // heads
    q = [[dot(row, [wq[r][c] for r in range(len(wq))]) for c in range(d)] for row in x]
    k = [[dot(row, [wk[r][c] for r in range(len(wk))]) for c in range(d)] for row in x]
    out = [[0.0] * n for _ in range(n)]
    for a in range(heads):
        sl = slice(a * hd, (a + 1) * hd)
        for i in range(n):
            p = softmax([dot(q[i][sl], k[j][sl]) / math.sqrt(hd) for j in range(n)])
            for j in range(n):
                out[i][j] += p[j] / heads
    return out
