"""Training losses.

The penalty losses are written in terms of ``sum_h`` (sum over agents of
h(theta_-i)) and ``S`` (first-best welfare) and broadcast over arrays.  Each
has a companion ``*_grad`` returning the derivative with respect to
``sum_h``; the ReLU corners get subgradient zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORSTCASE_EPSILON = 0.01
EXPECTATION_EPSILON = 1e-4


@dataclass(frozen=True)
class LossWeights:
    epsilon: float
    up_bound: float = 1.0  # alpha_target; only read by the worst-case loss

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.up_bound <= 1:
            raise ValueError("up_bound (alpha_target) must lie in (0, 1]")


def _relu(x):
    return np.maximum(x, 0.0)


def supervised_loss(h, h_manual):
    return (np.asarray(h) - np.asarray(h_manual)) ** 2


def worstcase_loss(sum_h, S, n: int, w: LossWeights):
    sum_h = np.asarray(sum_h, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    over = _relu(sum_h - (n - w.up_bound) * S)
    under = _relu((n - 1) * S - sum_h)
    return w.epsilon * over**2 + under**2


def worstcase_loss_grad(sum_h, S, n: int, w: LossWeights):
    over = _relu(sum_h - (n - w.up_bound) * S)
    under = _relu((n - 1) * S - sum_h)
    return 2.0 * w.epsilon * over - 2.0 * under


def expectation_loss(sum_h, S, n: int, w: LossWeights):
    sum_h = np.asarray(sum_h, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    gap = sum_h - (n - 1) * S
    return w.epsilon * _relu(gap) ** 2 + _relu(-gap) ** 2


def expectation_loss_grad(sum_h, S, n: int, w: LossWeights):
    gap = sum_h - (n - 1) * S
    return 2.0 * w.epsilon * _relu(gap) - 2.0 * _relu(-gap)


def feed_weighted_loss(base_loss, weight):
    weight = np.asarray(weight, dtype=np.float64)
    if np.any(weight < 0):
        raise ValueError("FEED weights must be nonnegative")
    return np.asarray(base_loss) * weight


def adversary_loss(ratio_stats) -> float:
    """min - max over the batch; minimising it widens the spread."""
    r = np.asarray(ratio_stats, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("adversary loss needs a nonempty batch")
    return float(r.min() - r.max())


def adversary_loss_grad(ratio_stats) -> np.ndarray:
    """Gradient only touches the first arg-min and the first arg-max."""
    r = np.asarray(ratio_stats, dtype=np.float64).ravel()
    g = np.zeros_like(r)
    g[np.argmin(r)] += 1.0
    g[np.argmax(r)] -= 1.0
    return g
