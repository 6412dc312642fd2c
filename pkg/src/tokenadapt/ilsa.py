"""In-decoder sparse aggregation of visual tokens.

One sparse-layer step:

1. pick text anchors: text tokens whose mean softmax alignment to the visual
   tokens is strictly above the mean alignment (all text tokens if none is);
2. score each visual token by the mean weight the anchors give it in the
   position-free, mask-free scoring matrix;
3. keep the global top-K by score;
4. among the rest, rank tokens by how dissimilar they are to the other
   leftover tokens of their own camera view, and recycle the top-k;
5. retain the union.

All index sets are row indices into the current sequence. Ties always go to
the token with the smaller original position.
"""

from dataclasses import dataclass
from fractions import Fraction
from math import floor

import numpy as np

from . import numerics as nx
from .errors import BudgetError, ContractViolation, ShapeError

DEFAULT_RECYCLE = 0.10


def _exact(x):
    return Fraction(str(x))


@dataclass(frozen=True)
class PruneConfig:
    """Pruning rate(s), recycle share and the layers that prune.

    ``pruning_rate`` is one rate for every sparse layer or one per layer.
    Budgets: B = round_half_up((1 - r) * |V|) (at least 1), K = floor((1 - rho) * B), k = B - K.
    """

    pruning_rate: object = 0.35
    recycle_fraction: float = DEFAULT_RECYCLE
    sparse_layers: tuple = (2,)

    def __post_init__(self):
        object.__setattr__(self, "sparse_layers", tuple(int(i) for i in self.sparse_layers))
        rates = self.rates
        if len(rates) not in (1, len(self.sparse_layers)):
            raise ValueError(f"{len(rates)} pruning rates for sparse layers {self.sparse_layers}")
        for r in rates:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"pruning rate {r} outside [0, 1)")
        if not 0.0 <= self.recycle_fraction <= 1.0:
            raise ValueError(f"recycle fraction {self.recycle_fraction} outside [0, 1]")

    @property
    def rates(self):
        r = self.pruning_rate
        return tuple(float(x) for x in r) if isinstance(r, (list, tuple)) else (float(r),)

    def rate_for_layer(self, layer):
        rates = self.rates
        if len(rates) == 1:
            return rates[0]
        return rates[self.sparse_layers.index(layer)]

    def budget(self, num_visual, rate=None):
        """(B, K, k) for ``num_visual`` candidates."""
        r = _exact(self.rates[0] if rate is None else rate)
        b = floor((1 - r) * num_visual + Fraction(1, 2))
        b = min(max(b, 1), num_visual)
        big_k = floor((1 - _exact(self.recycle_fraction)) * b)
        return b, big_k, b - big_k


@dataclass
class AnchorSet:
    indices: np.ndarray
    threshold: float
    alignment: np.ndarray  # one entry per text token, in layout order


@dataclass
class ImportanceScores:
    values: np.ndarray
    index: np.ndarray      # sequence row of each visual token
    position: np.ndarray   # original position, for tie-breaking


@dataclass
class DiversityScores:
    values: np.ndarray
    index: np.ndarray
    position: np.ndarray
    view: np.ndarray


@dataclass
class PruneDecision:
    I_global: np.ndarray
    I_recycle: np.ndarray
    I_final: np.ndarray
    B: int
    K: int
    k: int
    diversity: DiversityScores = None
    scores: ImportanceScores = None
    anchors: AnchorSet = None

    def validate(self, layout):
        g, r, f = (set(map(int, x)) for x in (self.I_global, self.I_recycle, self.I_final))
        if g & r:
            raise ContractViolation("global and recycled sets overlap")
        if f != g | r or len(f) != self.K + self.k or len(f) != self.B:
            raise ContractViolation(f"final set has {len(f)} tokens, budget {self.B} = {self.K} + {self.k}")
        if f and not set(layout.visual.tolist()) >= f:
            raise ContractViolation("decision references non-visual tokens")
        return self

    def to_record(self, layout):
        """JSON-ready dump keyed by original positions."""
        pos = layout.position

        def positions(idx):
            return [int(pos[i]) for i in idx]

        rec = {
            "B": int(self.B), "K": int(self.K), "k": int(self.k),
            "global": positions(self.I_global),
            "recycle": positions(self.I_recycle),
            "final": positions(self.I_final),
        }
        if self.scores is not None:
            rec["scores"] = {str(int(p)): float(v) for p, v in zip(self.scores.position, self.scores.values)}
        if self.diversity is not None:
            rec["diversity"] = {str(int(p)): float(v)
                                for p, v in zip(self.diversity.position, self.diversity.values)}
        if self.anchors is not None:
            rec["anchors"] = positions(self.anchors.indices)
            rec["tau"] = float(self.anchors.threshold)
        return rec


def select_text_anchors(h, layout):
    vis, txt = layout.visual, layout.text
    if len(txt) == 0:
        raise ContractViolation("anchor selection needs at least one text token")
    if len(vis) == 0:
        raise ContractViolation("anchor selection needs at least one visual token")
    h = nx.as_matrix(h, "h")
    with nx.category("anchors"):
        sim = nx.softmax_rows(nx.matmul(h[vis], np.ascontiguousarray(h[txt].T)))
    alignment = sim.mean(axis=0)
    tau = float(alignment.mean())
    chosen = txt[alignment > tau]
    if len(chosen) == 0:
        chosen = txt
    return AnchorSet(indices=chosen, threshold=tau, alignment=alignment)


def importance_scores(a_prune, anchors, layout):
    a = np.asarray(a_prune, dtype=np.float64)
    n = len(layout)
    if a.shape != (n, n):
        raise ShapeError(f"scoring matrix {a.shape} does not match {n} tokens")
    if len(anchors.indices) == 0:
        raise ContractViolation("empty anchor set")
    vis = layout.visual
    values = a[np.ix_(anchors.indices, vis)].mean(axis=0)
    return ImportanceScores(values=values, index=vis, position=layout.position[vis])


def _top(values, index, position, k, what):
    if k > len(values):
        raise BudgetError(f"{what}: budget {k} exceeds {len(values)} candidates")
    if k < 0:
        raise BudgetError(f"{what}: negative budget {k}")
    order = np.lexsort((position, -np.asarray(values)))
    return np.sort(index[order[:k]])


def global_top_k(s, K):
    return _top(s.values, s.index, s.position, K, "global top-K")


def diversity_scores(h, candidates, layout):
    """One minus the mean cosine similarity to the other same-view candidates."""
    h = nx.as_matrix(h, "h")
    candidates = np.asarray(candidates, dtype=np.int64)
    views = layout.view_id[candidates]
    values = np.empty(len(candidates))
    for v in np.unique(views):
        members = np.flatnonzero(views == v)
        if len(members) == 1:
            values[members] = 1.0
            continue
        sim, _ = nx.cosine_sim_matrix(h[candidates[members]])
        np.fill_diagonal(sim, 0.0)
        values[members] = 1.0 - sim.sum(axis=1) / (len(members) - 1)
    return DiversityScores(values=values, index=candidates, position=layout.position[candidates], view=views)


def recycle_select(d, k):
    return _top(d.values, d.index, d.position, k, "recycle top-k")


def ilsa_step(h, a_prune, layout, cfg, rate=None):
    vis = layout.visual
    b, big_k, small_k = cfg.budget(len(vis), rate)
    anchors = select_text_anchors(h, layout)
    scores = importance_scores(a_prune, anchors, layout)
    i_global = global_top_k(scores, big_k)
    rest = np.setdiff1d(vis, i_global)
    small_k = min(small_k, len(rest))
    div = diversity_scores(h, rest, layout)
    i_recycle = recycle_select(div, small_k)
    return PruneDecision(
        I_global=i_global, I_recycle=i_recycle, I_final=np.union1d(i_global, i_recycle),
        B=b, K=big_k, k=small_k, diversity=div, scores=scores, anchors=anchors,
    )


def make_sparsifier(cfg):
    """Adapter from ``ilsa_step`` to the ``model_forward`` sparsifier hook."""

    def sparsify(h, a_prune, layout, layer=None):
        rate = cfg.rate_for_layer(layer) if layer is not None else None
        return ilsa_step(h, a_prune, layout, cfg, rate=rate).validate(layout)

    return sparsify
