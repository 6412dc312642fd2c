"""Analytic FLOPs for dense and pruned forward passes.

FLOPs are counted as 2 x multiply-adds. Per decoder layer at sequence
length L: projections 8 L d^2, attention scores and values 4 L^2 d, gated
FFN 6 L d f. Sparse layers add the scoring pass (another 2 L^2 d plus its
softmax) and the anchor similarity. Softmax and RMS-norm costs are small
elementwise terms with the constants below.

The frontend (vision encoder on every frame, temporal fusion, adapter) is
computed from its own architecture and is not touched by pruning.
"""

from dataclasses import asdict, dataclass, field

from .ilsa import PruneConfig

SOFTMAX_FLOPS = 5  # max, subtract, exp, sum, divide per score
NORM_FLOPS = 4     # square, sum, scale, gain per element
REFERENCE_DENSE_GFLOPS = 9105.0


@dataclass(frozen=True)
class VisionEncoder:
    """Plain ViT with a class token and a non-gated GELU MLP."""

    layers: int = 24
    width: int = 1024
    mlp_dim: int = 4096
    heads: int = 16
    patch: int = 14
    image: int = 336
    channels: int = 3

    @property
    def patches(self):
        return (self.image // self.patch) ** 2


@dataclass(frozen=True)
class FlopsArchAssumptions:
    num_layers: int = 32
    d_model: int = 4096
    num_heads: int = 32
    ffn_dim: int = 11008
    tokens_per_view: int = 576
    views: int = 6
    text_tokens: int = 64
    frames: int = 3          # current frame plus history
    encoder: VisionEncoder = field(default_factory=VisionEncoder)
    tfm_layers: int = 1
    adapter_hidden: int = 4096  # two-layer MLP encoder width -> hidden -> d_model

    def __post_init__(self):
        for name in ("num_layers", "d_model", "num_heads", "ffn_dim", "tokens_per_view", "views", "frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.text_tokens < 0:
            raise ValueError("text_tokens must be non-negative")

    @property
    def visual_tokens(self):
        return self.views * self.tokens_per_view


def layer_macs(length, d_model, ffn_dim, sparse=False, text_tokens=0, visual_tokens=0):
    """Multiply-adds of one decoder layer by counter category."""
    out = {
        "qkvo": 4 * length * d_model * d_model,
        "ffn": 3 * length * d_model * ffn_dim,
        "attn_scores": length * length * d_model,
        "attn_values": length * length * d_model,
    }
    if sparse:
        out["scoring"] = length * length * d_model
        out["anchors"] = visual_tokens * text_tokens * d_model
    return out


def sequence_schedule(num_layers, sparse_layers, visual, other, cfg=None):
    """Per layer: (length, visual count, is_sparse). Pruning shortens the layers after a sparse one."""
    sched = []
    sparse = set(sparse_layers) if cfg is not None else set()
    for i in range(num_layers):
        sched.append((visual + other, visual, i in sparse))
        if i in sparse:
            visual = cfg.budget(visual, cfg.rate_for_layer(i))[0]
    return sched


def model_macs(spec, num_visual, num_text, num_other=0, cfg=None):
    """Predicted counter totals for ``model_forward`` on an ``ArchSpec``.

    Pass ``cfg`` when the forward runs with an ILSA sparsifier; its sparse
    layers must match ``spec.sparse_layers``.
    """
    total = {}
    for length, vis, sparse in sequence_schedule(spec.num_layers, spec.sparse_layers, num_visual,
                                                 num_text + num_other, cfg):
        for k, v in layer_macs(length, spec.d_model, spec.ffn_dim, sparse, num_text, vis).items():
            total[k] = total.get(k, 0) + v
    return total


@dataclass
class LayerFlops:
    length: int
    projections: int
    attention: int
    ffn: int
    elementwise: int
    eager_overhead: int

    @property
    def total(self):
        return self.projections + self.attention + self.ffn + self.elementwise + self.eager_overhead


@dataclass
class FlopsReport:
    layers: list
    frontend: dict
    text_tokens: int
    visual_tokens: int

    @property
    def frontend_total(self):
        return sum(self.frontend.values())

    @property
    def llm_total(self):
        return sum(l.total for l in self.layers)

    @property
    def eager_overhead(self):
        return sum(l.eager_overhead for l in self.layers)

    @property
    def total(self):
        return self.frontend_total + self.llm_total

    def as_dict(self):
        return {
            "total_gflops": self.total / 1e9,
            "llm_gflops": self.llm_total / 1e9,
            "frontend_gflops": self.frontend_total / 1e9,
            "frontend": {k: v / 1e9 for k, v in self.frontend.items()},
            "eager_overhead_gflops": self.eager_overhead / 1e9,
            "text_tokens": self.text_tokens,
            "visual_tokens": self.visual_tokens,
            "layers": [dict(asdict(l), total=l.total) for l in self.layers],
        }


def _vit_macs(e, images):
    n = e.patches + 1
    per_layer = 4 * n * e.width ** 2 + 2 * n * n * e.width + 2 * n * e.width * e.mlp_dim
    patchify = e.patches * e.channels * e.patch ** 2 * e.width
    return images * (e.layers * per_layer + patchify)


def frontend_flops(a):
    """Vision encoder on every view and frame, temporal fusion, adapter."""
    e = a.encoder
    tokens = a.views * a.tokens_per_view
    t = a.frames
    w = e.width
    # per token: bidirectional attention over t frames, gated FFN of width 2w
    tfm = a.tfm_layers * (4 * tokens * t * w * w + 2 * tokens * t * t * w + 3 * tokens * t * w * 2 * w)
    tfm += tokens * t * w  # weighted sum over frames
    adapter = tokens * (w * a.adapter_hidden + a.adapter_hidden * a.d_model)
    return {
        "vision_encoder": 2 * _vit_macs(e, a.views * a.frames),
        "temporal_fusion": 2 * tfm,
        "adapter": 2 * adapter,
    }


def _layer_flops(a, length, visual, sparse):
    m = layer_macs(length, a.d_model, a.ffn_dim, sparse, a.text_tokens, visual)
    softmax = SOFTMAX_FLOPS * a.num_heads * length * length
    overhead = 0
    if sparse:
        overhead = 2 * (m["scoring"] + m["anchors"]) + softmax
    return LayerFlops(
        length=length,
        projections=2 * m["qkvo"],
        attention=2 * (m["attn_scores"] + m["attn_values"]),
        ffn=2 * m["ffn"],
        elementwise=softmax + 2 * NORM_FLOPS * length * a.d_model,
        eager_overhead=overhead,
    )


def _report(a, sparse_layers, cfg):
    sched = sequence_schedule(a.num_layers, sparse_layers, a.visual_tokens, a.text_tokens, cfg)
    layers = [_layer_flops(a, length, vis, sp) for length, vis, sp in sched]
    return FlopsReport(layers=layers, frontend=frontend_flops(a), text_tokens=a.text_tokens,
                       visual_tokens=a.visual_tokens)


def dense_flops(a):
    return _report(a, (), None)


def pruned_flops(a, cfg):
    bad = [i for i in cfg.sparse_layers if not 0 <= i < a.num_layers]
    if bad:
        raise ValueError(f"sparse layers {bad} outside 0..{a.num_layers - 1}")
    return _report(a, cfg.sparse_layers, cfg)


def reduction_ratio(dense, pruned):
    """pruned / dense; one minus this is the saving."""
    return pruned.total / dense.total


REFERENCE_ROWS = (
    # measured reference points: (sparse layers, pruning rate, GFLOPs)
    ((2,), 0.60, 4773.0),
    ((4,), 0.35, 6190.0),
)


def summary(a, settings=((4,), 0.35), recycle=0.10):
    """Dense report, pruned reports and ratios for a list of (sparse layers, rate) settings."""
    dense = dense_flops(a)
    rows = []
    for layers, rate in settings:
        cfg = PruneConfig(rate, recycle, layers)
        p = pruned_flops(a, cfg)
        rows.append({
            "sparse_layers": list(layers), "pruning_rate": rate,
            "gflops": p.total / 1e9, "ratio": reduction_ratio(dense, p),
            "reduction": 1 - reduction_ratio(dense, p),
        })
    llm_needed = REFERENCE_DENSE_GFLOPS * 1e9 - dense.frontend_total
    return {
        "dense": dense.as_dict(),
        "pruned": rows,
        "calibration": {
            "reference_dense_gflops": REFERENCE_DENSE_GFLOPS,
            "residual_gflops": dense.total / 1e9 - REFERENCE_DENSE_GFLOPS,
            "relative_residual": dense.total / (REFERENCE_DENSE_GFLOPS * 1e9) - 1,
            "llm_gflops_left_for_reference": llm_needed / 1e9,
        },
    }


def text_sensitivity(a, settings, counts=(32, 64, 128), recycle=0.10):
    """Reduction ratios as the prompt length varies."""
    from dataclasses import replace

    out = {}
    for n in counts:
        s = summary(replace(a, text_tokens=n), settings, recycle)
        out[n] = [r["reduction"] for r in s["pruned"]]
    return out
