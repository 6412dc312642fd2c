"""Temporal fusion: time embeddings, per-token attention over frames, weighted compression.

Frames are stacked as ``(n + 1, T, d)`` with the oldest frame first. Each token
position attends only across its own history, so the fused map always has
``T`` rows whatever the history length.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DegenerateWeightsError, ShapeError
from .model import LayerWeights

WEIGHT_EPS = 1e-8
DEFAULT_HISTORY = 2


@dataclass(frozen=True)
class FrameFeatures:
    frames: np.ndarray
    view_spans: tuple = ()

    def __post_init__(self):
        f = np.ascontiguousarray(self.frames, dtype=np.float64)
        if f.ndim != 3:
            raise ShapeError(f"frames must be (time, token, dim), got {f.shape}")
        object.__setattr__(self, "frames", f)
        spans = tuple(tuple(int(v) for v in s) for s in self.view_spans) or ((0, 0, f.shape[1]),)
        object.__setattr__(self, "view_spans", spans)
        edges = sorted((s, e) for _, s, e in spans)
        cursor = 0
        for s, e in edges:
            if s != cursor or e <= s:
                raise ValueError(f"view spans {spans} do not partition [0, {f.shape[1]})")
            cursor = e
        if cursor != f.shape[1]:
            raise ValueError(f"view spans {spans} do not partition [0, {f.shape[1]})")

    @property
    def history(self):
        return self.frames.shape[0] - 1

    @property
    def num_tokens(self):
        return self.frames.shape[1]

    @property
    def dim(self):
        return self.frames.shape[2]

    def replace(self, frames):
        return FrameFeatures(frames, self.view_spans)


@dataclass
class TfmWeights:
    time_embedding: np.ndarray
    encoder: list
    time_weights: np.ndarray
    num_heads: int = 2


@dataclass
class Adapter:
    """Affine projection from fused visual features to the decoder width."""

    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x):
        return nx.matmul(x, self.weight) + self.bias


def init_tfm_weights(history, dim, seed, num_heads=2, ffn_dim=None, num_layers=1, std=0.02):
    g = nx.stream(seed, "tfm")
    ffn_dim = ffn_dim or 2 * dim
    encoder = []
    for _ in range(num_layers):
        encoder.append(LayerWeights(
            wq=g.normal(0, std, (dim, dim)), wk=g.normal(0, std, (dim, dim)),
            wv=g.normal(0, std, (dim, dim)), wo=g.normal(0, std, (dim, dim)),
            w_gate=g.normal(0, std, (dim, ffn_dim)), w_up=g.normal(0, std, (dim, ffn_dim)),
            w_down=g.normal(0, std, (ffn_dim, dim)),
            attn_norm=np.ones(dim), ffn_norm=np.ones(dim),
        ))
    return TfmWeights(
        time_embedding=g.normal(0, std, (history + 1, dim)),
        encoder=encoder,
        time_weights=np.full(history + 1, 1.0 / (history + 1)),
        num_heads=num_heads,
    )


def init_adapter(in_dim, out_dim, seed, std=0.02, identity=False):
    if identity:
        if in_dim != out_dim:
            raise ShapeError(f"identity adapter needs equal widths, got {in_dim} -> {out_dim}")
        return Adapter(np.eye(in_dim), np.zeros(out_dim))
    g = nx.stream(seed, "adapter")
    return Adapter(g.normal(0, std, (in_dim, out_dim)), np.zeros(out_dim))


def add_time_embedding(f, e):
    e = nx.as_matrix(e, "time embedding")
    if e.shape != (f.history + 1, f.dim):
        raise ShapeError(f"time embedding {e.shape} does not match {f.history + 1} frames x {f.dim} dims")
    return f.replace(f.frames + e[:, None, :])


def _encoder_block(x, w, heads):
    # x: (T, t, d); bidirectional attention over t, independently per token
    T, t, d = x.shape
    hd = d // heads
    flat = x.reshape(T * t, d)
    normed = nx.rms_norm(flat, w.attn_norm)

    def split(m):
        return np.ascontiguousarray(m.reshape(T, t, heads, hd).transpose(0, 2, 1, 3).reshape(T * heads, t, hd))

    q, k, v = split(nx.matmul(normed, w.wq)), split(nx.matmul(normed, w.wk)), split(nx.matmul(normed, w.wv))
    mixed = nx.attention_streaming(q, k, v, causal=False)
    mixed = mixed.reshape(T, heads, t, hd).transpose(0, 2, 1, 3).reshape(T * t, d)
    h1 = flat + nx.matmul(np.ascontiguousarray(mixed), w.wo)
    n2 = nx.rms_norm(h1, w.ffn_norm)
    gate = nx.matmul(n2, w.w_gate)
    h2 = h1 + nx.matmul(gate / (1.0 + np.exp(-gate)) * nx.matmul(n2, w.w_up), w.w_down)
    return h2.reshape(T, t, d)


def temporal_encode(f, w):
    if f.dim % w.num_heads:
        raise ShapeError(f"feature dim {f.dim} not divisible by {w.num_heads} heads")
    x = np.ascontiguousarray(f.frames.transpose(1, 0, 2))
    for layer in w.encoder:
        if layer.wq.shape != (f.dim, f.dim):
            raise ShapeError(f"encoder weights {layer.wq.shape} do not match dim {f.dim}")
        x = _encoder_block(x, layer, w.num_heads)
    return f.replace(x.transpose(1, 0, 2))


def time_weighted_aggregate(seq, w):
    w = np.asarray(w, dtype=np.float64)
    frames = seq.frames if isinstance(seq, FrameFeatures) else np.asarray(seq, dtype=np.float64)
    if w.shape != (frames.shape[0],):
        raise ShapeError(f"{w.shape[0]} time weights for {frames.shape[0]} frames")
    denom = w.sum()
    if abs(denom) <= WEIGHT_EPS:
        raise DegenerateWeightsError(f"time weights sum to {denom!r}; |sum| must exceed {WEIGHT_EPS}")
    return np.tensordot(w, frames, axes=1) / denom


def tfm_forward(f, w):
    """Fuse ``n + 1`` frames into one ``T x d`` feature map."""
    f = add_time_embedding(f, w.time_embedding)
    f = temporal_encode(f, w)
    return time_weighted_aggregate(f, w.time_weights)
