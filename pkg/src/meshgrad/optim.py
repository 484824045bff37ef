"""Adam with per-group feasibility projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def project(group: str, value: np.ndarray) -> np.ndarray:
    """Map a parameter back into its valid set after an update."""
    if group in ("vertex_colors", "uvs", "texture"):
        return np.clip(value, 0.0, 1.0)
    if group == "light_dir":
        n = np.linalg.norm(value)
        return value / n if n > 0 else value
    if group in ("k_d", "k_s"):
        return np.maximum(value, 0.0)
    if group == "shininess":
        return np.maximum(value, 1.0)
    return value


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update. Returns (new params, state); the input
    arrays are not modified."""
    for k, g in grads.items():
        if k not in params or np.shape(g) != np.shape(params[k]):
            raise ShapeMismatch(f"gradient for {k!r} has shape {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, p in params.items():
        g = np.asarray(grads.get(k, np.zeros_like(p)), dtype=np.float64)
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[k] = project(k, p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state
