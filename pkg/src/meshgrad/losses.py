"""Image losses and mesh regularizers, each returning (value, gradient)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyUnion, IsolatedVertex, NonFiniteComponent, ShapeMismatch
from .geometry import cross_backward, face_cross, normalize_backward


@dataclass(frozen=True)
class LossWeights:
    lambda_col: float = 1.0
    lambda_sm: float = 0.001
    lambda_lap: float = 0.01

    def __post_init__(self):
        for name in ("lambda_col", "lambda_sm", "lambda_lap"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class LossReport:
    total: float
    iou: float
    col: float
    sm: float
    lap: float

    @property
    def components(self) -> dict:
        return {"iou": self.iou, "col": self.col, "sm": self.sm, "lap": self.lap}


def iou_loss(target, pred):
    """1 - |S*P|_1 / |S + P - S*P|_1 with its gradient w.r.t. ``pred``."""
    s = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if s.shape != p.shape:
        raise ShapeMismatch(f"{s.shape} vs {p.shape}")
    inter = np.sum(s * p)
    union = np.sum(s + p - s * p)
    if union <= 0:
        raise EmptyUnion("both silhouettes are empty")
    loss = 1.0 - inter / union
    # d(inter)/dp = s, d(union)/dp = 1 - s
    grad = -(s * union - inter * (1.0 - s)) / union ** 2
    return float(loss), grad


def l1_loss(target, pred):
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeMismatch(f"{t.shape} vs {p.shape}")
    diff = p - t
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def smoothness_loss(mesh, adj):
    """Sum over interior edges of 1 - cos(angle between adjacent face normals)."""
    v = mesh.vertices
    pairs = adj.interior_edges
    grad = np.zeros_like(v)
    if len(pairs) == 0:
        return 0.0, grad
    cross = face_cross(v, mesh.faces)
    norm = np.linalg.norm(cross, axis=1)
    ok = norm > 1e-300
    n = np.divide(cross, norm[:, None], out=np.zeros_like(cross), where=ok[:, None])
    keep = ok[pairs[:, 0]] & ok[pairs[:, 1]]
    a, b = pairs[keep, 0], pairs[keep, 1]
    loss = float(np.sum(1.0 - np.sum(n[a] * n[b], axis=1)))
    g_n = np.zeros_like(n)
    for d in range(3):
        g_n[:, d] -= np.bincount(a, weights=n[b, d], minlength=len(n))
        g_n[:, d] -= np.bincount(b, weights=n[a, d], minlength=len(n))
    return loss, cross_backward(v, mesh.faces, normalize_backward(cross, g_n))


def laplacian_loss(mesh, adj):
    """(1/V) sum_v |v - mean(neighbors(v))|^2."""
    v = mesh.vertices
    owner, flat, counts = adj.neighbor_csr()
    if np.any(counts == 0):
        raise IsolatedVertex(f"vertex {int(np.argmax(counts == 0))} has no neighbors")
    nv = len(v)
    mean = np.stack([np.bincount(owner, weights=v[flat, d], minlength=nv) for d in range(3)], axis=1)
    mean /= counts[:, None]
    delta = v - mean
    loss = float(np.sum(delta * delta) / nv)
    g_delta = 2.0 * delta / nv
    share = g_delta[owner] / counts[owner, None]
    grad = g_delta.copy()
    for d in range(3):
        grad[:, d] -= np.bincount(flat, weights=share[:, d], minlength=nv)
    return loss, grad


def combined_loss(components, weights: LossWeights) -> LossReport:
    """Weighted total iou + lambda_col*col + lambda_sm*sm + lambda_lap*lap.

    ``components`` maps names to floats; missing entries count as zero.
    """
    vals = {k: float(components.get(k, 0.0)) for k in ("iou", "col", "sm", "lap")}
    for k, x in vals.items():
        if not math.isfinite(x):
            raise NonFiniteComponent(f"{k} loss is {x}")
    total = (vals["iou"] + weights.lambda_col * vals["col"] + weights.lambda_sm * vals["sm"]
             + weights.lambda_lap * vals["lap"])
    return LossReport(total, **vals)
