"""Tiny decoder-only transformer with RoPE and in-forward token sparsification.

Layers listed in ``ArchSpec.sparse_layers`` run the weight-materializing
("eager") attention path, which also yields the position-free, mask-free
scoring matrix used for pruning. All other layers run the streaming path
that never builds the L x L weight matrix.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import numerics as nx
from .errors import ContractViolation, ShapeError

VISUAL, TEXT, OTHER = 0, 1, 2
_MODALITY_NAMES = {"visual": VISUAL, "text": TEXT, "other": OTHER}


@dataclass(frozen=True)
class ArchSpec:
    num_layers: int = 8
    d_model: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    rope_theta: float = nx.ROPE_THETA
    sparse_layers: tuple = (2,)
    vocabless: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sparse_layers", tuple(int(i) for i in self.sparse_layers))
        if min(self.num_layers, self.d_model, self.num_heads, self.ffn_dim) < 1:
            raise ValueError("layer, width and head counts must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by {self.num_heads} heads")
        if self.head_dim % 2:
            raise ValueError(f"head_dim {self.head_dim} must be even for rotary embeddings")
        sl = self.sparse_layers
        if any(b <= a for a, b in zip(sl, sl[1:])):
            raise ValueError(f"sparse_layers must be strictly increasing, got {sl}")
        if sl and (sl[0] < 0 or sl[-1] >= self.num_layers):
            raise ValueError(f"sparse_layers {sl} out of range for {self.num_layers} layers")

    @property
    def head_dim(self):
        return self.d_model // self.num_heads


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    attn_norm: np.ndarray
    ffn_norm: np.ndarray

    def check(self, spec):
        d, f = spec.d_model, spec.ffn_dim
        expected = {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "w_gate": (d, f), "w_up": (d, f), "w_down": (f, d),
            "attn_norm": (d,), "ffn_norm": (d,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"{name} has shape {got}, expected {shape}")

    @classmethod
    def zeros(cls, spec):
        d, f = spec.d_model, spec.ffn_dim
        z = np.zeros
        return cls(z((d, d)), z((d, d)), z((d, d)), z((d, d)), z((d, f)), z((d, f)), z((f, d)),
                   np.ones(d), np.ones(d))


WEIGHT_NAMES = ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down", "attn_norm", "ffn_norm")


def init_weights(spec, seed, std=0.02, qk_gain=None):
    """Scaled-normal weights for every layer; norm gains start at one.

    ``qk_gain`` replaces W_Q and W_K with ``qk_gain * I`` so the raw
    query/key product reduces to a scaled hidden-state similarity. The
    benchmark harness uses it to make planted saliency visible to scoring
    without training.
    """
    layers = []
    d, f = spec.d_model, spec.ffn_dim
    for i in range(spec.num_layers):
        g = nx.stream(seed, "layer", i)
        w = LayerWeights(
            wq=g.normal(0, std, (d, d)), wk=g.normal(0, std, (d, d)),
            wv=g.normal(0, std, (d, d)), wo=g.normal(0, std, (d, d)),
            w_gate=g.normal(0, std, (d, f)), w_up=g.normal(0, std, (d, f)),
            w_down=g.normal(0, std, (f, d)),
            attn_norm=np.ones(d), ffn_norm=np.ones(d),
        )
        if qk_gain is not None:
            w.wq = np.eye(d) * qk_gain
            w.wk = np.eye(d) * qk_gain
        layers.append(w)
    return layers


@dataclass(frozen=True)
class SequenceLayout:
    """Per-token structure: modality, camera view, frame and original position."""

    modality: np.ndarray
    view_id: np.ndarray
    frame_id: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("modality", "view_id", "frame_id", "position"):
            a = np.asarray(getattr(self, name), dtype=np.int64).copy()
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        n = len(arrays["modality"])
        if any(len(a) != n for a in arrays.values()):
            raise ValueError("layout fields must have equal length")
        if np.any(np.diff(self.position) <= 0):
            raise ValueError("original positions must be strictly increasing")
        vis = self.modality == VISUAL
        if np.any(self.view_id[vis] < 0):
            raise ValueError("every visual token needs a view id")
        if np.any(self.view_id[self.modality == TEXT] >= 0):
            raise ValueError("text tokens carry no view id")

    @classmethod
    def build(cls, records):
        """From ``(modality, view_id, frame_id)`` tuples; positions are 0..n-1."""
        mods, views, frames = [], [], []
        for mod, view, frame in records:
            mods.append(_MODALITY_NAMES[mod] if isinstance(mod, str) else mod)
            views.append(-1 if view is None else view)
            frames.append(-1 if frame is None else frame)
        return cls(mods, views, frames, np.arange(len(mods)))

    def __len__(self):
        return len(self.modality)

    @property
    def visual(self):
        return np.flatnonzero(self.modality == VISUAL)

    @property
    def text(self):
        return np.flatnonzero(self.modality == TEXT)

    @property
    def non_visual(self):
        return np.flatnonzero(self.modality != VISUAL)

    @property
    def num_views(self):
        v = self.view_id[self.modality == VISUAL]
        return int(v.max()) + 1 if len(v) else 0

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SequenceLayout(self.modality[idx], self.view_id[idx], self.frame_id[idx], self.position[idx])

    def shifted(self, offset):
        return SequenceLayout(self.modality, self.view_id, self.frame_id, self.position + offset)


@dataclass
class AttentionResult:
    output: np.ndarray
    scoring_weights: Optional[np.ndarray] = None
    # head-averaged RoPE'd causal weights; only on the eager path
    causal_weights: Optional[np.ndarray] = None


def _split_heads(x, heads):
    n, d = x.shape
    return np.ascontiguousarray(x.reshape(n, heads, d // heads).transpose(1, 0, 2))


def _merge_heads(x):
    h, n, hd = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(n, h * hd))


def attention_forward(h, w, spec, positions, want_scoring=False, path=None):
    """Causal multi-head RoPE attention, including the output projection.

    ``path`` is ``"eager"`` (materialize weights) or ``"streaming"``; by
    default the eager path runs only when scoring weights are requested.
    With ``want_scoring`` the result also carries the scoring matrix:
    softmax(Q_raw K_raw^T / sqrt(head_dim)) without rotation or mask,
    averaged over heads.
    """
    h = nx.as_matrix(h, "h")
    if h.shape[1] != spec.d_model:
        raise ShapeError(f"hidden states have {h.shape[1]} columns, expected d_model={spec.d_model}")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (h.shape[0],):
        raise ShapeError(f"{positions.shape} positions for {h.shape[0]} tokens")
    path = path or ("eager" if want_scoring else "streaming")
    if want_scoring and path != "eager":
        raise ValueError("scoring weights require the eager path")

    heads = spec.num_heads
    with nx.category("qkvo"):
        q_raw = _split_heads(nx.matmul(h, w.wq), heads)
        k_raw = _split_heads(nx.matmul(h, w.wk), heads)
        v = _split_heads(nx.matmul(h, w.wv), heads)
    q_rot = nx.rope_apply(q_raw, positions, spec.rope_theta)
    k_rot = nx.rope_apply(k_raw, positions, spec.rope_theta)

    result = AttentionResult(output=None)
    if path == "eager":
        probs = nx.attention_probs(q_rot, k_rot, causal=True)
        mixed = nx.apply_probs(probs, v)
        result.causal_weights = probs.mean(axis=0)
        if want_scoring:
            result.scoring_weights = nx.attention_probs(q_raw, k_raw, causal=False, tag="scoring").mean(axis=0)
    elif path == "streaming":
        mixed = nx.attention_streaming(q_rot, k_rot, v, causal=True)
    else:
        raise ValueError(f"unknown attention path {path!r}")
    with nx.category("qkvo"):
        result.output = nx.matmul(_merge_heads(mixed), w.wo)
    return result


def ffn_forward(x, w):
    """Gated feed-forward: down(silu(x W_gate) * (x W_up))."""
    with nx.category("ffn"):
        gate = nx.matmul(x, w.w_gate)
        up = nx.matmul(x, w.w_up)
        act = gate / (1.0 + np.exp(-gate)) * up
        return nx.matmul(act, w.w_down)


def decoder_layer_forward(h, w, spec, positions, want_scoring=False, path=None, return_attention=False):
    """Pre-norm residual block: returns (hidden, scoring_weights or None).

    With ``return_attention`` the full ``AttentionResult`` is appended.
    """
    att = attention_forward(nx.rms_norm(h, w.attn_norm), w, spec, positions, want_scoring, path)
    h1 = h + att.output
    h2 = h1 + ffn_forward(nx.rms_norm(h1, w.ffn_norm), w)
    if return_attention:
        return h2, att.scoring_weights, att
    return h2, att.scoring_weights


@dataclass
class PruneTrace:
    # (layer index, decision) for every sparse layer that pruned
    decisions: list = field(default_factory=list)
    # per-layer (layer input, attention result) when requested
    layer_inputs: list = field(default_factory=list)
    attentions: list = field(default_factory=list)
    lengths: list = field(default_factory=list)


# (h_in, scoring_weights, layout, layer=i) -> object with an I_final index array
Sparsifier = Callable[..., object]


def model_forward(embeddings, layout, spec, weights, sparsifier=None, capture=False):
    """Run every layer, pruning visual tokens after each sparse layer.

    ``sparsifier(h_in, scoring_weights, layout, layer=i)`` receives the layer input and
    must return an object with an ``I_final`` array of row indices into the
    current sequence, all visual. The sequence is compacted to those rows
    plus every non-visual token, in original order, and later layers run on
    the shorter sequence. Retained tokens keep their original positions.
    """
    h = nx.as_matrix(embeddings, "embeddings")
    if h.shape[0] != len(layout):
        raise ShapeError(f"{h.shape[0]} embeddings for a layout of {len(layout)} tokens")
    if len(weights) != spec.num_layers:
        raise ShapeError(f"{len(weights)} layer weights for {spec.num_layers} layers")
    trace = PruneTrace()
    sparse = set(spec.sparse_layers) if sparsifier is not None else set()
    for i, w in enumerate(weights):
        want = i in sparse
        h_in = h
        h, scoring, att = decoder_layer_forward(h, w, spec, layout.position, want_scoring=want,
                                               return_attention=True)
        trace.lengths.append(len(layout))
        if capture:
            trace.layer_inputs.append(h_in)
            trace.attentions.append(att)
        if want:
            decision = sparsifier(h_in, scoring, layout, layer=i)
            keep = _compaction_index(decision, layout)
            trace.decisions.append((i, decision))
            h = np.ascontiguousarray(h[keep])
            layout = layout.take(keep)
    return h, layout, trace


def _compaction_index(decision, layout):
    chosen = np.asarray(decision.I_final, dtype=np.int64)
    n = len(layout)
    if chosen.size and (chosen.min() < 0 or chosen.max() >= n):
        raise ContractViolation(f"sparsifier returned indices outside [0, {n})")
    if np.any(layout.modality[chosen] != VISUAL):
        raise ContractViolation("sparsifier selected non-visual tokens")
    if len(np.unique(chosen)) != len(chosen):
        raise ContractViolation("sparsifier returned duplicate indices")
    return np.union1d(layout.non_visual, chosen)


def dump_weights(path, weights):
    """Write weights as one text header line of ``name:shape`` items, then little-endian f64."""
    items, blobs = [], []
    for i, w in enumerate(weights):
        for name in WEIGHT_NAMES:
            arr = np.asarray(getattr(w, name), dtype="<f8")
            items.append(f"layer{i}.{name}:{'x'.join(map(str, arr.shape))}")
            blobs.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(("tokenadapt-weights v1 " + " ".join(items) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)


def load_weights(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if header[:2] != ["tokenadapt-weights", "v1"]:
            raise ValueError(f"{path}: not a tokenadapt weight file")
        payload = fh.read()
    layers, offset = {}, 0
    for item in header[2:]:
        key, shape = item.split(":")
        layer, name = key.split(".")
        dims = tuple(int(s) for s in shape.split("x"))
        count = int(np.prod(dims))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(dims)
        offset += 8 * count
        layers.setdefault(int(layer[5:]), {})[name] = arr.astype(np.float64)
    if offset != len(payload):
        raise ValueError(f"{path}: {len(payload) - offset} trailing bytes")
    return [LayerWeights(**layers[i]) for i in sorted(layers)]
