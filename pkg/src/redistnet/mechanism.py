"""VCG redistribution mechanism for the public project problem.

``n`` agents report types in [0, 1]; a project of cost 1 is built iff the
reported types sum to at least 1.  A mechanism is characterised by a
redistribution function ``h`` that only sees the other agents' types.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class DimensionError(ValueError):
    """Raised when a profile and a redistribution function disagree on n."""


def validate_profile(values) -> np.ndarray:
    theta = np.asarray(values, dtype=np.float64)
    if theta.ndim != 1:
        raise DimensionError(f"profile must be 1-D, got shape {theta.shape}")
    if theta.size < 2:
        raise DimensionError("profile needs at least 2 agents")
    if not np.all(np.isfinite(theta)) or theta.min() < 0.0 or theta.max() > 1.0:
        raise ValueError("profile entries must lie in [0, 1]")
    return theta


class Redistribution:
    """Base class for redistribution functions h(theta_-i).

    Subclasses implement :meth:`evaluate_sorted`, which receives a 2-D array
    whose rows are already sorted in descending order.  Sorting happens here
    so anonymity never depends on the subclass.
    """

    n: int

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("n must be >= 2")
        self.n = int(n)

    @property
    def arity(self) -> int:
        return self.n - 1

    def evaluate_sorted(self, others: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def batch(self, others) -> np.ndarray:
        """Evaluate h on each row of an (m, n-1) array."""
        others = np.asarray(others, dtype=np.float64)
        if others.ndim != 2 or others.shape[1] != self.arity:
            raise DimensionError(
                f"expected (m, {self.arity}) inputs, got shape {others.shape}"
            )
        return np.asarray(self.evaluate_sorted(-np.sort(-others, axis=1)), dtype=np.float64)

    def __call__(self, others) -> float:
        others = np.asarray(others, dtype=np.float64)
        if others.ndim != 1:
            raise DimensionError("single evaluation expects a 1-D vector")
        return float(self.batch(others[None, :])[0])


class FunctionRedistribution(Redistribution):
    """Wrap a plain Python callable ``f(sorted_others) -> float``."""

    def __init__(self, n: int, fn):
        super().__init__(n)
        self.fn = fn

    def evaluate_sorted(self, others: np.ndarray) -> np.ndarray:
        return np.array([float(self.fn(row)) for row in others])


@dataclass(frozen=True)
class MechanismOutcome:
    build: bool
    receipts: np.ndarray
    welfare: float
    first_best: float
    ratio_stat: float


@lru_cache(maxsize=None)
def others_index(n: int) -> np.ndarray:
    """(n, n-1) array; row i lists the agent indices other than i."""
    return np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=np.intp)


def others_of(profiles: np.ndarray) -> np.ndarray:
    """Stack theta_-i for every agent: (b, n) -> (b, n, n-1)."""
    profiles = np.asarray(profiles, dtype=np.float64)
    return profiles[..., others_index(profiles.shape[-1])]


def first_best(profile) -> float:
    """S(theta) = max(sum(theta), 1)."""
    theta = validate_profile(profile)
    return max(float(theta.sum()), 1.0)


def first_best_batch(profiles: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(profiles, dtype=np.float64).sum(axis=-1), 1.0)


def _check_arity(h: Redistribution, n: int) -> None:
    if h.n != n:
        raise DimensionError(f"h was built for n={h.n} but the profile has n={n}")


def h_values(h: Redistribution, profiles: np.ndarray) -> np.ndarray:
    """h(theta_-i) for every profile and agent, shape (b, n)."""
    profiles = np.atleast_2d(np.asarray(profiles, dtype=np.float64))
    b, n = profiles.shape
    _check_arity(h, n)
    flat = others_of(profiles).reshape(b * n, n - 1)
    return h.batch(flat).reshape(b, n)


def sum_h(h: Redistribution, profiles: np.ndarray) -> np.ndarray:
    return h_values(h, profiles).sum(axis=1)


def ratio_stats(h: Redistribution, profiles: np.ndarray) -> np.ndarray:
    """sum_i h(theta_-i) / S(theta) for each row of ``profiles``."""
    profiles = np.atleast_2d(np.asarray(profiles, dtype=np.float64))
    return sum_h(h, profiles) / first_best_batch(profiles)


def outcome(profile, h: Redistribution) -> MechanismOutcome:
    theta = validate_profile(profile)
    n = theta.size
    _check_arity(h, n)
    hv = h_values(h, theta[None, :])[0]
    total = float(theta.sum())
    build = total >= 1.0
    if build:
        # summing sorted theta_-i keeps receipts exactly permutation-equivariant
        others_sum = np.sort(others_of(theta[None, :])[0], axis=1).sum(axis=1)
        receipts = others_sum - hv
    else:
        receipts = (n - 1) / n - hv
    s = max(total, 1.0)
    hsum = float(hv.sum())
    return MechanismOutcome(
        build=build,
        receipts=receipts,
        welfare=n * s - hsum,
        first_best=s,
        ratio_stat=hsum / s,
    )


def agent_utilities(profile, h: Redistribution) -> np.ndarray:
    """Per-agent utility computed directly from the decision and receipts."""
    theta = validate_profile(profile)
    out = outcome(theta, h)
    if out.build:
        return theta + out.receipts
    return 1.0 / theta.size + out.receipts


def efficiency_ratio(profile, h: Redistribution) -> float:
    """r = n - sum_i h / S, i.e. welfare over first-best welfare."""
    theta = validate_profile(profile)
    return theta.size - outcome(theta, h).ratio_stat


def feasibility_gap(profile, h: Redistribution) -> float:
    """ratio_stat - (n - 1); negative means the budget runs a deficit."""
    theta = validate_profile(profile)
    return outcome(theta, h).ratio_stat - (theta.size - 1)
