"""Seeded synthetic driving scenes.

Each camera view is a square grid of visual tokens. A few text tokens are
"anchors" pointing along random unit directions; the rest are low-norm
filler. Small square blobs of visual tokens (the planted objects) are built
along an anchor direction, so their alignment with the text grows with
``alignment_strength``. Everything else is isotropic noise. History frames
repeat the current scene with small jitter.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .. import numerics as nx
from ..model import SequenceLayout
from ..temporal import FrameFeatures

VIEW_NAMES = ("Front", "Front Left", "Rear Left", "Front Right", "Rear Right", "Rear")


@dataclass(frozen=True)
class ScenarioParams:
    views: int = 6
    tokens_per_view: int = 64
    history: int = 2
    dim: int = 64
    text_tokens: int = 16
    anchors: int = 4
    objects_per_view: int = 2
    object_size: int = 2
    alignment_strength: float = 1.0
    noise_scale: float = 1.0
    anchor_scale: float = 1.0
    filler_scale: float = 0.1
    frame_jitter: float = 0.1

    def __post_init__(self):
        if self.views < 1 or self.tokens_per_view < 1 or self.dim < 2:
            raise ValueError("views, tokens_per_view and dim must be positive (dim >= 2)")
        if self.history < 0:
            raise ValueError("history must be non-negative")
        if not 1 <= self.anchors <= self.text_tokens:
            raise ValueError(f"need 1 <= anchors <= text_tokens, got {self.anchors} and {self.text_tokens}")
        if self.grid ** 2 != self.tokens_per_view:
            raise ValueError(f"tokens_per_view {self.tokens_per_view} is not a square grid")
        if not 1 <= self.object_size <= self.grid:
            raise ValueError(f"object_size {self.object_size} does not fit a {self.grid}x{self.grid} grid")
        if self.objects_per_view < 0 or min(self.noise_scale, self.alignment_strength) < 0:
            raise ValueError("counts and scales must be non-negative")

    @property
    def grid(self):
        return int(round(self.tokens_per_view ** 0.5))

    @property
    def visual_tokens(self):
        return self.views * self.tokens_per_view


@dataclass
class Scenario:
    seed: int
    params: ScenarioParams
    planted: np.ndarray       # sorted visual row indices of planted tokens
    directions: np.ndarray    # (anchors, dim) unit vectors
    anchor_rows: np.ndarray   # text rows (in the full sequence) that carry a direction

    def view_of(self, i):
        return int(i) // self.params.tokens_per_view

    def describe(self):
        return {"seed": self.seed, "params": asdict(self.params),
                "planted": self.planted.tolist(), "anchor_rows": self.anchor_rows.tolist()}


def scenario_layout(p):
    recs = [("visual", v, 0) for v in range(p.views) for _ in range(p.tokens_per_view)]
    recs += [("text", None, None)] * p.text_tokens
    return SequenceLayout.build(recs)


def generate_scenario(seed, p=ScenarioParams()):
    """Returns (scenario, frame features, text embeddings, layout)."""
    g = nx.stream(seed, "scenario")
    d = p.dim
    dirs = g.normal(size=(p.anchors, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    base = g.normal(0, p.noise_scale, (p.visual_tokens, d))
    planted = set()
    for v in range(p.views):
        for _ in range(p.objects_per_view):
            r0, c0 = g.integers(0, p.grid - p.object_size + 1, size=2)
            j = int(g.integers(0, p.anchors))
            for r in range(r0, r0 + p.object_size):
                for c in range(c0, c0 + p.object_size):
                    i = v * p.tokens_per_view + r * p.grid + c
                    if i in planted:
                        continue
                    planted.add(i)
                    base[i] += p.alignment_strength * np.sqrt(d) * dirs[j]

    frames = base[None] + g.normal(0, p.frame_jitter, (p.history + 1, p.visual_tokens, d))
    spans = [(v, v * p.tokens_per_view, (v + 1) * p.tokens_per_view) for v in range(p.views)]

    text = g.normal(0, p.filler_scale, (p.text_tokens, d))
    slots = np.sort(g.choice(p.text_tokens, p.anchors, replace=False))
    text[slots] += p.anchor_scale * np.sqrt(d) * dirs
    scen = Scenario(seed=seed, params=p, planted=np.array(sorted(planted), dtype=np.int64),
                    directions=dirs, anchor_rows=p.visual_tokens + slots)
    return scen, FrameFeatures(frames, spans), text, scenario_layout(p)
