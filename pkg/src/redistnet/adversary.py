"""Generator network that searches for extreme type profiles.

The generator maps Uniform(0,1)^n noise to a profile in (0,1)^n and is
trained to widen the batch spread of sum_i h(theta_-i) / S(theta) under a
frozen h-network: the batch maximum exposes the worst efficiency ratio and
the batch minimum exposes budget deficits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hnet import NeuralRedistribution, SumHPass
from .losses import adversary_loss, adversary_loss_grad
from .neuralnet import AdamState, DivergenceError, MlpParams, adam_step, backward, forward, init_xavier

GEN_HIDDEN = (64,) * 4


@dataclass
class Generator:
    net: MlpParams
    n: int

    @classmethod
    def create(cls, n: int, rng: np.random.Generator, hidden=GEN_HIDDEN) -> "Generator":
        return cls(init_xavier((n, *hidden, n), "sigmoid", rng), n)


def as_pool(gen) -> list[Generator]:
    return [gen] if isinstance(gen, Generator) else list(gen)


def create_pool(n: int, size: int, rng: np.random.Generator, hidden=GEN_HIDDEN) -> list[Generator]:
    """Independently initialised generators.

    A single generator trained on the exact min/max spread collapses onto
    one local extremum; several members cover several basins.
    """
    return [Generator.create(n, rng, hidden) for _ in range(size)]


def split_sizes(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (k < extra) for k in range(parts)]


def generate_batch(gen, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Forward images of fresh noise; a pool contributes near-equal shares."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pool = as_pool(gen)
    parts = []
    for g, size in zip(pool, split_sizes(batch_size, len(pool))):
        if size:
            parts.append(forward(g.net, rng.random((size, g.n)))[0])
    return np.concatenate(parts)


def generate_from_noise(gen, noise: np.ndarray) -> np.ndarray:
    """Deterministic images of fixed noise, rows split across the pool."""
    pool = as_pool(gen)
    out, start = [], 0
    for g, size in zip(pool, split_sizes(len(noise), len(pool))):
        out.append(forward(g.net, noise[start : start + size])[0])
        start += size
    return np.concatenate(out)


@dataclass
class AdversaryStepResult:
    loss: float
    spread: float
    min_ratio: float
    max_ratio: float


def ratio_input_grad(h: NeuralRedistribution, profiles: np.ndarray, grad_ratio=None, fwd: SumHPass | None = None):
    """Ratio statistics of ``profiles`` and the profile gradient of sum(grad_ratio * ratio).

    ``grad_ratio`` may be a callable receiving the ratios.  The kink of
    S = max(sum, 1) takes the sum branch: S has gradient 1 on every
    coordinate when sum(theta) >= 1 and 0 otherwise.
    """
    fwd = SumHPass(h, profiles) if fwd is None else fwd
    total = profiles.sum(axis=1)
    S = np.maximum(total, 1.0)
    ratio = fwd.sum_h / S
    g = grad_ratio(ratio) if callable(grad_ratio) else np.asarray(grad_ratio, dtype=np.float64)
    _, _, g_sum = fwd.backward(g / S, want_input=True)
    dS = (total >= 1.0).astype(np.float64)
    g_prof = g_sum - (g * fwd.sum_h / S**2 * dS)[:, None]
    return ratio, g_prof


def adversary_step(
    gen: Generator,
    h: NeuralRedistribution,
    batch_size: int,
    state: AdamState,
    rng: np.random.Generator,
) -> AdversaryStepResult:
    """One Adam step on the generator; ``h`` is only read."""
    noise = rng.random((batch_size, gen.n))
    profiles, trace = forward(gen.net, noise)
    ratio, g_prof = ratio_input_grad(h, profiles, adversary_loss_grad)
    loss = adversary_loss(ratio)
    if not np.isfinite(loss):
        raise DivergenceError("adversary loss is not finite")
    gw, gb, _ = backward(gen.net, trace, g_prof)
    adam_step(gen.net, gw, gb, state)
    return AdversaryStepResult(loss, float(ratio.max() - ratio.min()), float(ratio.min()), float(ratio.max()))


def train_pool(
    h: NeuralRedistribution,
    size: int,
    steps: int,
    batch_size: int,
    init_rng: np.random.Generator,
    rng: np.random.Generator,
    lr: float = 1e-3,
    decay: float = 0.98,
    decay_every: int = 100,
) -> list[Generator]:
    """Fresh pool trained for ``steps`` Adam steps per member against a frozen ``h``."""
    pool = create_pool(h.n, size, init_rng)
    for g in pool:
        state = AdamState.for_params(g.net, lr=lr, decay=decay, decay_every=decay_every)
        for _ in range(steps):
            adversary_step(g, h, batch_size, state, rng)
    return pool
