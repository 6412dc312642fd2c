"""Trajectory decoder and its training loss.

Learnable trajectory queries cross-attend to projected decoder hidden states
through a few residual blocks, then a linear head maps each query to one
waypoint ``(x, y, heading)``. Axis convention: x forward, y lateral (left),
heading in radians, all in the ego frame.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import ShapeError

WAYPOINT_DIM = 3
LATERAL = 1  # column of y in a waypoint row
SMOOTH_L1_BETA = 1.0


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 8
    query_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    mlp_dim: int = 64
    lambdas: tuple = (2.0, 0.5, 1.0)
    timestep: float = 0.5  # seconds between waypoints, only used for CSV output

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if self.horizon < 2:
            raise ValueError(f"horizon {self.horizon} < 2: the velocity loss needs differences")
        if min(self.query_dim, self.num_layers, self.num_heads, self.mlp_dim) < 1:
            raise ValueError("planner widths and counts must be positive")
        if self.query_dim % self.num_heads:
            raise ValueError(f"query_dim {self.query_dim} not divisible by {self.num_heads} heads")
        if len(self.lambdas) != 3:
            raise ValueError(f"expected three loss weights, got {self.lambdas}")


@dataclass
class Trajectory:
    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != WAYPOINT_DIM:
            raise ShapeError(f"waypoints must be (T, 3), got {self.waypoints.shape}")
        if not np.all(np.isfinite(self.waypoints)):
            raise ValueError("waypoints must be finite")

    def __len__(self):
        return len(self.waypoints)

    def to_csv(self, path, timestep=0.5):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["t", "x", "y", "heading"])
            for i, (x, y, yaw) in enumerate(self.waypoints):
                out.writerow([repr(round((i + 1) * timestep, 12)), repr(float(x)), repr(float(y)), repr(float(yaw))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([[float(r["x"]), float(r["y"]), float(r["heading"])] for r in rows])


@dataclass
class CrossBlock:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class PlannerWeights:
    queries: np.ndarray      # (horizon, m), one learned embedding per future step
    memory_proj: np.ndarray  # (d_model, m)
    blocks: list = field(default_factory=list)
    head_w: np.ndarray = None  # (m, 3)
    head_b: np.ndarray = None  # (3,)


def init_planner_weights(cfg, d_model, seed, std=0.02):
    g = nx.stream(seed, "planner")
    m, f = cfg.query_dim, cfg.mlp_dim
    blocks = [CrossBlock(*(g.normal(0, std, (m, m)) for _ in range(4)),
                         g.normal(0, std, (m, f)), g.normal(0, std, (f, m)))
              for _ in range(cfg.num_layers)]
    return PlannerWeights(
        queries=g.normal(0, 1.0, (cfg.horizon, m)),
        memory_proj=g.normal(0, std, (d_model, m)),
        blocks=blocks,
        head_w=g.normal(0, std, (m, WAYPOINT_DIM)),
        head_b=np.zeros(WAYPOINT_DIM),
    )


def zero_planner_weights(cfg, d_model, bias=None):
    m, f = cfg.query_dim, cfg.mlp_dim
    z = np.zeros
    return PlannerWeights(
        queries=z((cfg.horizon, m)),
        memory_proj=z((d_model, m)),
        blocks=[CrossBlock(z((m, m)), z((m, m)), z((m, m)), z((m, m)), z((m, f)), z((f, m)))
                for _ in range(cfg.num_layers)],
        head_w=z((m, WAYPOINT_DIM)),
        head_b=z(WAYPOINT_DIM) if bias is None else np.asarray(bias, dtype=np.float64),
    )


def _heads(x, heads):
    n, d = x.shape
    return np.ascontiguousarray(x.reshape(n, heads, d // heads).transpose(1, 0, 2))


def cross_attention(x, mem, blk, heads):
    """Queries ``x`` attend to every memory row (no mask, no positions)."""
    q = _heads(nx.matmul(x, blk.wq), heads)
    k = _heads(nx.matmul(mem, blk.wk), heads)
    v = _heads(nx.matmul(mem, blk.wv), heads)
    mixed = nx.attention_streaming(q, k, v, causal=False)
    merged = np.ascontiguousarray(mixed.transpose(1, 0, 2).reshape(x.shape[0], -1))
    return nx.matmul(merged, blk.wo)


def decode_trajectory(memory, cfg, weights):
    memory = nx.as_matrix(memory, "memory")
    if memory.shape[0] < 1:
        raise ShapeError("planner memory needs at least one row")
    if memory.shape[1] != weights.memory_proj.shape[0]:
        raise ShapeError(f"memory width {memory.shape[1]} does not match projection "
                         f"{weights.memory_proj.shape}")
    if weights.queries.shape != (cfg.horizon, cfg.query_dim):
        raise ShapeError(f"queries {weights.queries.shape} do not match horizon x query_dim")
    if len(weights.blocks) != cfg.num_layers:
        raise ShapeError(f"{len(weights.blocks)} decoder blocks for {cfg.num_layers} layers")
    mem = nx.matmul(memory, weights.memory_proj)
    x = np.array(weights.queries, dtype=np.float64)
    for blk in weights.blocks:
        x = x + cross_attention(x, mem, blk, cfg.num_heads)
        x = x + nx.matmul(np.maximum(nx.matmul(x, blk.w1), 0.0), blk.w2)
    return Trajectory(nx.matmul(x, weights.head_w) + weights.head_b)


# (trajectory, memory) -> trajectory; stands in for a learned scorer that re-ranks candidates
Refiner = Callable[[Trajectory, np.ndarray], Trajectory]


def passthrough_refiner(traj, memory=None):
    return traj


def plan(memory, cfg, weights, refiner: Refiner = passthrough_refiner):
    return refiner(decode_trajectory(memory, cfg, weights), memory)


# ---- loss ----

def smooth_l1(x, beta=SMOOTH_L1_BETA):
    a = np.abs(x)
    return np.where(a < beta, 0.5 * x * x / beta, a - 0.5 * beta)


def smooth_l1_grad(x, beta=SMOOTH_L1_BETA):
    return np.clip(x / beta, -1.0, 1.0)


def _residual(pred, gt):
    p = pred.waypoints if isinstance(pred, Trajectory) else np.asarray(pred, dtype=np.float64)
    g = gt.waypoints if isinstance(gt, Trajectory) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and target {g.shape} differ")
    if p.ndim != 2 or p.shape[1] != WAYPOINT_DIM or p.shape[0] < 2:
        raise ShapeError(f"trajectories must be (T>=2, 3), got {p.shape}")
    return p - g


def composite_loss(pred, gt, lambdas=(2.0, 0.5, 1.0)):
    """Total loss and its parts ``traj``, ``x``, ``vel``, ``end``.

    Every part is a mean of smooth-L1 terms: all coordinates, the lateral
    column, first differences along time, and the last waypoint.
    """
    e = _residual(pred, gt)
    l1, l2, l3 = lambdas
    parts = {
        "traj": float(smooth_l1(e).mean()),
        "x": float(smooth_l1(e[:, LATERAL]).mean()),
        "vel": float(smooth_l1(np.diff(e, axis=0)).mean()),
        "end": float(smooth_l1(e[-1]).mean()),
    }
    total = parts["traj"] + l1 * parts["x"] + l2 * parts["vel"] + l3 * parts["end"]
    return total, parts


def loss_gradient(pred, gt, lambdas=(2.0, 0.5, 1.0)):
    """d composite_loss / d pred, same shape as the waypoints."""
    e = _residual(pred, gt)
    l1, l2, l3 = lambdas
    t, c = e.shape
    grad = smooth_l1_grad(e) / e.size
    grad[:, LATERAL] += l1 * smooth_l1_grad(e[:, LATERAL]) / t
    dv = l2 * smooth_l1_grad(np.diff(e, axis=0)) / ((t - 1) * c)
    grad[1:] += dv
    grad[:-1] -= dv
    grad[-1] += l3 * smooth_l1_grad(e[-1]) / c
    return grad
