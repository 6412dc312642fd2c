"""Dense float64 kernels: matmul, row softmax, RMS norm, cosine similarity, RoPE, attention.

Matrices are plain C-contiguous ``float64`` numpy arrays. Dense products go
through numpy's BLAS on every backend. The other loop kernels come from the
compiled ``_kernels`` extension when it is importable, otherwise from the
numpy fallback. Set ``TOKENADAPT_BACKEND=python`` to force the fallback or
``TOKENADAPT_BACKEND=compiled`` to fail loudly when the extension is missing.
"""

import os

import numpy as np

from ..errors import ShapeError
from . import _fallback
from .counter import count_macs, category, current_label, record
from .rng import stream

RMS_EPS = 1e-6
ROPE_THETA = 10000.0


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
_requested = os.environ.get("TOKENADAPT_BACKEND", "auto").lower()
if _requested == "python":
    _impl = _fallback
elif _requested == "compiled":
    if _compiled is None:
        raise ImportError("TOKENADAPT_BACKEND=compiled but tokenadapt.numerics._kernels is not built")
    _impl = _compiled
else:
    _impl = _compiled or _fallback

BACKEND = _impl.BACKEND


def available_backends():
    """Map of backend name to kernel module, for side-by-side checks and benchmarks."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def as_matrix(x, name="matrix"):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _as3(x, name):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-D (head, pos, dim), got shape {arr.shape}")
    return arr


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    record(current_label(), a.shape[0] * a.shape[1] * b.shape[1])
    # BLAS beats the extension's loop matmul; that one is kept for benchmarks
    return a @ b


def softmax_rows(m):
    m = as_matrix(m)
    if m.shape[1] == 0:
        raise ShapeError(f"softmax over empty rows, shape {m.shape}")
    return _impl.softmax_rows(m)


def rms_norm(x, gain, eps=RMS_EPS):
    x = as_matrix(x, "x")
    gain = np.ascontiguousarray(gain, dtype=np.float64)
    if gain.shape != (x.shape[1],):
        raise ShapeError(f"gain shape {gain.shape} does not match {x.shape[1]} columns")
    return _impl.rms_norm(x, gain, float(eps))


def cosine_sim_matrix(x):
    """Pairwise cosine similarities and a boolean mask of zero-norm rows.

    Zero-norm rows have similarity 0 to every other row.
    """
    return _impl.cosine_sim_matrix(as_matrix(x, "x"))


def rope_apply(x, positions, theta_base=ROPE_THETA):
    x = _as3(x, "x")
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if x.shape[2] % 2:
        raise ShapeError(f"rotary embedding needs an even head_dim, got {x.shape[2]}")
    if positions.shape != (x.shape[1],):
        raise ShapeError(f"{positions.shape[0]} positions for {x.shape[1]} tokens")
    return _impl.rope_apply(x, positions, float(theta_base))


def _check_qk(q, k):
    if q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        raise ShapeError(f"query {q.shape} and key {k.shape} disagree on heads/head_dim")


def attention_probs(q, k, causal=True, scale=None, tag="attn_scores"):
    """Per-head attention weights, shape (heads, Lq, Lk). Causal masking needs Lq == Lk."""
    q, k = _as3(q, "q"), _as3(k, "k")
    _check_qk(q, k)
    if causal and q.shape[1] != k.shape[1]:
        raise ShapeError(f"causal attention needs square scores, got {q.shape[1]}x{k.shape[1]}")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[2])
    record(tag, q.shape[0] * q.shape[1] * k.shape[1] * q.shape[2])
    return _impl.attention_probs(q, k, bool(causal), float(scale))


def apply_probs(w, v):
    """Mix values with materialized weights: (h, Lq, Lk) x (h, Lk, dv)."""
    w, v = _as3(w, "w"), _as3(v, "v")
    if w.shape[0] != v.shape[0] or w.shape[2] != v.shape[1]:
        raise ShapeError(f"weights {w.shape} and values {v.shape} disagree")
    record("attn_values", w.shape[0] * w.shape[1] * w.shape[2] * v.shape[2])
    return w @ v


def attention_streaming(q, k, v, causal=True, scale=None):
    """Attention output without materializing the weight matrix."""
    q, k, v = _as3(q, "q"), _as3(k, "k"), _as3(v, "v")
    _check_qk(q, k)
    if v.shape[:2] != k.shape[:2]:
        raise ShapeError(f"key {k.shape} and value {v.shape} disagree")
    if causal and q.shape[1] != k.shape[1]:
        raise ShapeError(f"causal attention needs square scores, got {q.shape[1]}x{k.shape[1]}")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[2])
    h, lq, d = q.shape
    record("attn_scores", h * lq * k.shape[1] * d)
    record("attn_values", h * lq * k.shape[1] * v.shape[2])
    return _impl.attention_streaming(q, k, v, bool(causal), float(scale))


__all__ = [
    "BACKEND",
    "RMS_EPS",
    "ROPE_THETA",
    "apply_probs",
    "as_matrix",
    "attention_probs",
    "attention_streaming",
    "available_backends",
    "category",
    "cosine_sim_matrix",
    "count_macs",
    "matmul",
    "rms_norm",
    "rope_apply",
    "softmax_rows",
    "stream",
]
