import numpy as np

from .. import numerics as nx


def salient_recall(retained, planted):
    planted = np.asarray(planted)
    if len(planted) == 0:
        return float("nan")
    return float(np.isin(planted, retained).sum() / len(planted))


def view_coverage(retained, layout):
    """Fraction of camera views that keep at least one token."""
    n = layout.num_views
    if n == 0:
        return float("nan")
    return len(np.unique(layout.view_id[np.asarray(retained, dtype=np.int64)])) / n


def pairwise_diversity(h, retained):
    """Mean of 1 - cos over distinct pairs of retained tokens."""
    retained = np.asarray(retained, dtype=np.int64)
    m = len(retained)
    if m < 2:
        return float("nan")
    sim, _ = nx.cosine_sim_matrix(h[retained])
    off = (sim.sum() - np.trace(sim)) / (m * (m - 1))
    return float(1.0 - off)


def mean_std(values):
    v = np.asarray([x for x in values if x == x], dtype=np.float64)
    if len(v) == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0, "n": int(len(v))}
