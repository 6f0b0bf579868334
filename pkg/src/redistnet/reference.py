"""Closed-form redistribution functions.

``FallbackMax`` is weakly budget-balanced on every profile and serves as the
default warm-start target.  The asymptotically optimal (AO) mechanism is
not bundled; a formula can be installed at runtime with :func:`register_ao`
and then becomes the preferred warm-start target.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .mechanism import Redistribution


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key or component."""


def fallback_h(others, n: int) -> float:
    others = np.asarray(others, dtype=np.float64)
    if others.size != n - 1:
        raise ValueError(f"expected {n - 1} other types, got {others.size}")
    return max(float(others.sum()), (n - 1) / n)


def constant_share_h(n: int) -> float:
    if n < 2:
        raise ValueError("n must be >= 2")
    return (n - 1) / n


class FallbackMax(Redistribution):
    """h(theta_-i) = max(sum(theta_-i), (n-1)/n)."""

    kind = "fallback"

    def evaluate_sorted(self, others):
        return np.maximum(others.sum(axis=1), (self.n - 1) / self.n)


class ConstantShare(Redistribution):
    """h = (n-1)/n everywhere; runs a deficit whenever the project is built."""

    kind = "constant"

    def evaluate_sorted(self, others):
        return np.full(others.shape[0], (self.n - 1) / self.n)


_AO_FORMULA: Callable[[np.ndarray, int], float] | None = None


def register_ao(fn: Callable[[np.ndarray, int], float] | None) -> None:
    """Install ``fn(sorted_others, n) -> h`` as the AO mechanism (None removes it)."""
    global _AO_FORMULA
    _AO_FORMULA = fn


def ao_available() -> bool:
    return _AO_FORMULA is not None


def plugin_ao(others, n: int) -> float:
    if _AO_FORMULA is None:
        raise ConfigError(
            "AO mechanism is not installed; call register_ao() or use warm_start=fallback"
        )
    s = -np.sort(-np.asarray(others, dtype=np.float64))
    return float(_AO_FORMULA(s, n))


class PluginAO(Redistribution):
    kind = "ao"

    def __init__(self, n: int):
        if _AO_FORMULA is None:
            plugin_ao(np.zeros(n - 1), n)  # raises the configuration error
        super().__init__(n)

    def evaluate_sorted(self, others):
        return np.array([plugin_ao(row, self.n) for row in others])


def manual_mechanism(kind: str, n: int) -> Redistribution:
    """Look up a manual mechanism by config name (fallback | ao | constant)."""
    if kind == "fallback":
        return FallbackMax(n)
    if kind == "ao":
        return PluginAO(n)
    if kind == "constant":
        return ConstantShare(n)
    raise ConfigError(f"unknown manual mechanism {kind!r}")


def default_warm_start() -> str:
    return "ao" if ao_available() else "fallback"
