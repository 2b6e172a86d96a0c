"""Shared numeric kernels: softmax, cross-entropy, Adam, and gradient checking.

Everything here operates on float64 numpy arrays and is a pure function of
its inputs, so callers may freely parallelize over independent data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass
class AdamHyper:
    """Adam hyperparameters. Defaults are the method's canonical values."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError("beta1/beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: Array
    v: Array
    step: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0)


def adam_step(
    params: Array,
    grads: Array,
    state: AdamState,
    hyper: AdamHyper | None = None,
) -> tuple[Array, AdamState]:
    """One bias-corrected Adam update. Returns new params and state.

    Elementwise over arrays of any shape; params, grads and the state
    moments must all share that shape.
    """
    hyper = hyper or AdamHyper()
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(np.atleast_1d(grads)))[0])
        raise ValueError(f"non-finite gradient at index {bad}")

    step = state.step + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads * grads
    m_hat = m / (1.0 - hyper.beta1**step)
    v_hat = v / (1.0 - hyper.beta2**step)
    new_params = params - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new_params, AdamState(m=m, v=v, step=step)


def softmax(logits: Array, axis: int = -1) -> Array:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax input must be finite")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def cross_entropy(probs: Array, label: int) -> float:
    """Negative log-probability of ``label`` under the distribution ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError(f"expected a probability vector, got shape {probs.shape}")
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"class index {label} out of range for {probs.shape[0]} classes")
    with np.errstate(divide="ignore"):
        return float(-np.log(probs[label]))


def check_gradient(
    f: Callable[[Array], float],
    x: Array,
    analytic_grad: Array,
    h: float = 1e-5,
) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    The relative error at coordinate i uses the denominator
    max(|numeric_i|, |analytic_i|, 1e-8) so that near-zero gradients do not
    blow the ratio up.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(analytic_grad, dtype=np.float64)
    if x.shape != grad.shape:
        raise ValueError(f"shape mismatch: x {x.shape}, grad {grad.shape}")
    worst = 0.0
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        xp = x.copy()
        xm = x.copy()
        xp.ravel()[i] = flat_x[i] + h
        xm.ravel()[i] = flat_x[i] - h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"function returned a non-finite value near coordinate {i}")
        numeric = (fp - fm) / (2.0 * h)
        denom = max(abs(numeric), abs(flat_g[i]), 1e-8)
        worst = max(worst, abs(numeric - flat_g[i]) / denom)
    return worst
