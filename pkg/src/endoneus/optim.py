"""Bias-corrected adaptive-moment updates on flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import NumericalError


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, **kw) -> "OptimizerState":
        return cls(np.zeros_like(params), np.zeros_like(params), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState, lr: float) -> None:
    """In-place update of ``params`` and ``state``."""
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} are not aligned")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NumericalError(f"non-finite gradient at {bad.size} entries, first index {bad[0]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grads
    state.v *= b2
    state.v += (1 - b2) * grads * grads
    mhat = state.m / (1 - b1 ** state.step)
    vhat = state.v / (1 - b2 ** state.step)
    params -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(params.dtype, copy=False)


def cosine_lr(it: int, total: int, lr0: float, lr_min: float) -> float:
    if total <= 0:
        return lr0
    frac = min(max(it / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + np.cos(np.pi * frac))
