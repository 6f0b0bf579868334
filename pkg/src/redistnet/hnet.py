"""Neural redistribution function and the differentiable sum over agents.

:class:`SumHPass` runs the full path profile -> theta_-i -> sort -> features
-> MLP -> sum_i h, and can pull gradients back to the network parameters
and, for the adversary, to the profile itself.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .features import FeatureCombo, extract_sorted, feature_vjp, output_dim
from .mechanism import Redistribution, others_index
from .neuralnet import MlpParams, backward, forward, init_xavier

H_HIDDEN = (100,) * 6


class NeuralRedistribution(Redistribution):
    def __init__(self, params: MlpParams, n: int, combo=FeatureCombo.RAW, top_k: int = 1):
        super().__init__(n)
        self.params = params
        self.combo = FeatureCombo.parse(combo)
        self.top_k = top_k
        expected = output_dim(self.combo, n, top_k)
        if params.layer_sizes[0] != expected or params.layer_sizes[-1] != 1:
            raise ValueError(
                f"network {params.layer_sizes} does not fit n={n}, features={self.combo.value}"
            )

    def evaluate_sorted(self, others):
        feats = extract_sorted(self.combo, others, self.top_k)
        return forward(self.params, feats)[0][:, 0]


def init_h_network(n: int, combo, rng, hidden=H_HIDDEN, top_k: int = 1) -> MlpParams:
    sizes = (output_dim(FeatureCombo.parse(combo), n, top_k), *hidden, 1)
    return init_xavier(sizes, "identity", rng)


@lru_cache(maxsize=None)
def _one_hot_scatter(n: int) -> np.ndarray:
    # maps the flattened (agent i, slot k) of theta_-i back to agent j
    idx = others_index(n)
    E = np.zeros((n * (n - 1), n))
    E[np.arange(n * (n - 1)), idx.reshape(-1)] = 1.0
    return E


class SumHPass:
    """One forward evaluation of sum_i h(theta_-i) over a batch of profiles."""

    def __init__(self, h: NeuralRedistribution, profiles: np.ndarray):
        self.h = h
        self.profiles = np.asarray(profiles, dtype=np.float64)
        b, n = self.profiles.shape
        if n != h.n:
            raise ValueError(f"profiles have n={n}, h expects n={h.n}")
        others = self.profiles[:, others_index(n)].reshape(b * n, n - 1)
        self.order = np.argsort(-others, axis=1, kind="stable")
        self.sorted = np.take_along_axis(others, self.order, axis=1)
        feats = extract_sorted(h.combo, self.sorted, h.top_k)
        out, self.trace = forward(h.params, feats)
        self.h_values = out[:, 0].reshape(b, n)
        self.sum_h = self.h_values.sum(axis=1)

    def backward(self, grad_sum_h: np.ndarray, want_input: bool = False):
        """Gradients of ``sum(grad_sum_h * sum_h)``.

        Returns ``(grad_weights, grad_biases, grad_profiles)``; the last item is
        None unless ``want_input``.
        """
        b, n = self.profiles.shape
        gout = np.repeat(np.asarray(grad_sum_h, dtype=np.float64), n)[:, None]
        gw, gb, gfeat = backward(self.h.params, self.trace, gout)
        if not want_input:
            return gw, gb, None
        gsorted = feature_vjp(self.h.combo, self.sorted, gfeat, self.h.top_k)
        gothers = np.zeros_like(gsorted)
        np.put_along_axis(gothers, self.order, gsorted, axis=1)
        gprof = gothers.reshape(b, n * (n - 1)) @ _one_hot_scatter(n)
        return gw, gb, gprof
