"""Reference pruning strategies that share ILSA's budget B.

Each returns sorted visual row indices of size exactly B.
"""

import numpy as np

from .. import ilsa
from .. import numerics as nx


def _ranked(values, index, position):
    order = np.lexsort((position, -np.asarray(values)))
    return index[order]


def baseline_random(layout, budget, seed):
    vis = layout.visual
    g = nx.stream(seed, "baseline", "random")
    return np.sort(g.choice(vis, size=budget, replace=False))


def baseline_global_top(scores, budget):
    """Pure top-B by importance, no recycling."""
    return ilsa.global_top_k(scores, budget)


def baseline_per_view_average(scores, layout, budget):
    """floor(B / C) top-scored tokens from every view, remainder to the best leftovers overall."""
    views = layout.view_id[scores.index]
    present = np.unique(views)
    share = budget // len(present)
    chosen = []
    for v in present:
        m = views == v
        chosen.extend(_ranked(scores.values[m], scores.index[m], scores.position[m])[:share])
    taken = np.isin(scores.index, chosen)
    rest = _ranked(scores.values[~taken], scores.index[~taken], scores.position[~taken])
    chosen.extend(rest[:budget - len(chosen)])
    return np.sort(np.asarray(chosen, dtype=np.int64))


def positional_step(h, causal_weights, layout, cfg, rate=None):
    """The ILSA pipeline with scores read from the rotated, causally masked weights."""
    return ilsa.ilsa_step(h, causal_weights, layout, cfg, rate=rate)


def baseline_positional(h, causal_weights, layout, cfg, rate=None):
    return positional_step(h, causal_weights, layout, cfg, rate).I_final
