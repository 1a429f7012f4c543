"""Rollout error metrics."""

from __future__ import annotations

import numpy as np

from .core import LengthMismatch, Trajectory


class DegenerateReference(ValueError):
    """Reference field is spatially constant, so the correlation is undefined."""


def _aligned(pred, ref):
    p = pred.states if isinstance(pred, Trajectory) else np.asarray(pred, dtype=float)
    r = ref.states if isinstance(ref, Trajectory) else np.asarray(ref, dtype=float)
    if p.shape != r.shape:
        raise LengthMismatch(f"prediction {p.shape} and reference {r.shape} are not aligned")
    if isinstance(pred, Trajectory) and isinstance(ref, Trajectory):
        if pred.grid != ref.grid or not np.array_equal(pred.times, ref.times):
            raise LengthMismatch("prediction and reference differ in grid or times")
    return p, r


def metric_mse(pred, ref) -> tuple[np.ndarray, float]:
    """Per-step spatial mean squared error and its mean over steps."""
    p, r = _aligned(pred, ref)
    per_step = np.mean((p - r) ** 2, axis=-1)
    return per_step, float(np.mean(per_step))


def pearson_r2(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Pearson correlation of two fields; ``b`` is the reference."""
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    sb = float(np.dot(b, b))
    if sb == 0.0:
        raise DegenerateReference("reference field is constant")
    sa = float(np.dot(a, a))
    if sa == 0.0:
        return 0.0
    c = float(np.dot(a, b))
    return c * c / (sa * sb)


def metric_r2(pred, ref) -> np.ndarray:
    """Per-step squared Pearson correlation; NaN where the reference is constant."""
    p, r = _aligned(pred, ref)
    p2 = p.reshape(-1, p.shape[-1])
    r2 = r.reshape(-1, r.shape[-1])
    out = np.empty(len(p2))
    for i, (a, b) in enumerate(zip(p2, r2)):
        try:
            out[i] = pearson_r2(a, b)
        except DegenerateReference:
            out[i] = np.nan
    return out.reshape(p.shape[:-1])
