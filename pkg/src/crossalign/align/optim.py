"""Adam updates and finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    if set(params) != set(grads):
        raise ValueError(f"parameter keys {sorted(params)} != gradient keys {sorted(grads)}")
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for k in sorted(params):
        p = np.asarray(params[k], dtype=np.float64)
        g = np.asarray(grads[k], dtype=np.float64)
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for {k}: params {p.shape} vs grads {g.shape}")
        m = beta1 * state.m.get(k, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(k, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(t, m_new, v_new)


def finite_diff_gradcheck(
    loss_fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
    rel_floor: float = 1e-2,
) -> float:
    """Max per-coordinate relative error between ``analytic`` and central differences.

    The relative error at coordinate ``k`` is ``|a_k - n_k| / max(|a_k|, |n_k|, s)``
    with ``s = rel_floor * max_j max(|a_j|, |n_j|)``, so coordinates whose
    gradient is negligible next to the largest one are not judged on
    round-off alone.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"analytic gradient shape {analytic.shape} != input shape {x.shape}")
    flat = x.reshape(-1)
    numeric = np.zeros(flat.size)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = loss_fn(x)
        flat[k] = orig - h
        down = loss_fn(x)
        flat[k] = orig
        numeric[k] = (up - down) / (2.0 * h)
    a = analytic.reshape(-1)
    if a.size == 0:
        return 0.0
    mag = np.maximum(np.abs(a), np.abs(numeric))
    denom = np.maximum(mag, max(rel_floor * mag.max(), np.finfo(float).tiny))
    return float(np.max(np.abs(a - numeric) / denom))
