"""Numpy implementations of the loop kernels, used when the extension is absent."""

import numpy as np

BACKEND = "python"

# key block width for the streaming attention path
_BLOCK = 64


def matmul(a, b):
    return a @ b


def softmax_rows(x):
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def rms_norm(x, gain, eps):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + eps)
    return x * inv * gain


def cosine_sim_matrix(x):
    norms = np.sqrt(np.sum(x * x, axis=1))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    unit = x / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    np.fill_diagonal(sim, 1.0)
    return sim, zero


def rope_apply(x, positions, theta_base):
    d = x.shape[2]
    freq = theta_base ** (-2.0 * np.arange(d // 2) / d)
    ang = positions[:, None] * freq[None, :]
    c, s = np.cos(ang), np.sin(ang)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    return out


def _causal_mask(lq, lk, start=0):
    return np.arange(start, start + lk)[None, :] > np.arange(lq)[:, None]


def attention_probs(q, k, causal, scale):
    logits = np.einsum("hid,hjd->hij", q, k) * scale
    if causal:
        logits[:, _causal_mask(q.shape[1], k.shape[1])] = -np.inf
    logits -= logits.max(axis=2, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=2, keepdims=True)


def attention_streaming(q, k, v, causal, scale):
    h, lq, _ = q.shape
    lk = k.shape[1]
    out = np.zeros((h, lq, v.shape[2]))
    mx = np.full((h, lq, 1), -np.inf)
    total = np.zeros((h, lq, 1))
    for start in range(0, lk, _BLOCK):
        stop = min(start + _BLOCK, lk)
        s = np.einsum("hid,hjd->hij", q, k[:, start:stop]) * scale
        if causal:
            s[:, _causal_mask(lq, stop - start, start)] = -np.inf
        new_mx = np.maximum(mx, s.max(axis=2, keepdims=True))
        # rows whose keys are all masked so far keep -inf; avoid inf - inf
        shift = np.where(np.isfinite(new_mx), new_mx, 0.0)
        corr = np.exp(np.where(np.isfinite(mx), mx - shift, -np.inf))
        p = np.exp(s - shift)
        total = total * corr + p.sum(axis=2, keepdims=True)
        out = out * corr + np.einsum("hij,hjd->hid", p, v[:, start:stop])
        mx = new_mx
    return out / total
