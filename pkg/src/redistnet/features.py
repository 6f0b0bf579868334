"""Dimension reduction of theta_-i into a handful of summary features.

All extractors work on the last axis, so they accept a single vector or a
stack of rows.  The ``*_sorted`` helpers assume rows are already sorted in
descending order; :func:`feature_vjp` is their reverse-mode derivative, used
when gradients must flow from the h-network back into generated profiles.
"""

from __future__ import annotations

import enum

import numpy as np


class FeatureCombo(enum.Enum):
    RAW = "raw"
    C1 = "c1"  # highest, sum of the rest
    C2 = "c2"  # highest, highest - lowest
    C3 = "c3"  # highest, std of all
    C4 = "c4"  # highest, std of the rest
    C5 = "c5"  # highest, largest jump
    C6 = "c6"  # highest, lowest, largest jump
    C7 = "c7"  # highest, sum of the rest, largest jump
    C8 = "c8"  # highest, lowest, sum of the rest

    @classmethod
    def parse(cls, text: str | "FeatureCombo") -> "FeatureCombo":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            choices = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown feature combo {text!r}; expected one of {choices}") from None


_EXTRA_DIMS = {
    FeatureCombo.C1: 1,
    FeatureCombo.C2: 1,
    FeatureCombo.C3: 1,
    FeatureCombo.C4: 1,
    FeatureCombo.C5: 1,
    FeatureCombo.C6: 2,
    FeatureCombo.C7: 2,
    FeatureCombo.C8: 2,
}


def default_combo(n: int) -> FeatureCombo:
    return FeatureCombo.C8 if n >= 5 else FeatureCombo.RAW


def output_dim(combo: FeatureCombo, n: int, top_k: int = 1) -> int:
    combo = FeatureCombo.parse(combo)
    if combo is FeatureCombo.RAW:
        return n - 1
    return top_k + _EXTRA_DIMS[combo]


def sort_desc(v) -> np.ndarray:
    return -np.sort(-np.asarray(v, dtype=np.float64), axis=-1)


def largest_jump(v) -> np.ndarray | float:
    """Largest gap between adjacent values once sorted."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise ValueError("largest_jump needs at least two values")
    jumps = np.diff(np.sort(v, axis=-1), axis=-1)
    out = jumps.max(axis=-1)
    return float(out) if out.ndim == 0 else out


def _pop_std(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean((x - x.mean(axis=-1, keepdims=True)) ** 2, axis=-1))


def extract_sorted(combo: FeatureCombo, s: np.ndarray, top_k: int = 1) -> np.ndarray:
    """Features of descending-sorted rows ``s`` (shape (..., n-1))."""
    if combo is FeatureCombo.RAW:
        return s
    k = s.shape[-1]
    if k < 2:
        raise ValueError("feature reduction needs at least two other agents")
    if not 1 <= top_k < k:
        raise ValueError(f"top_k must be in [1, {k - 1}]")
    top = s[..., :top_k]
    rest = s[..., top_k:]
    low = s[..., -1:]
    cols = [top]
    if combo is FeatureCombo.C1:
        cols.append(rest.sum(axis=-1, keepdims=True))
    elif combo is FeatureCombo.C2:
        cols.append(s[..., :1] - low)
    elif combo is FeatureCombo.C3:
        cols.append(_pop_std(s)[..., None])
    elif combo is FeatureCombo.C4:
        cols.append(_pop_std(rest)[..., None])
    elif combo is FeatureCombo.C5:
        cols.append((s[..., :-1] - s[..., 1:]).max(axis=-1, keepdims=True))
    elif combo is FeatureCombo.C6:
        cols += [low, (s[..., :-1] - s[..., 1:]).max(axis=-1, keepdims=True)]
    elif combo is FeatureCombo.C7:
        cols += [rest.sum(axis=-1, keepdims=True), (s[..., :-1] - s[..., 1:]).max(axis=-1, keepdims=True)]
    elif combo is FeatureCombo.C8:
        cols += [low, rest.sum(axis=-1, keepdims=True)]
    return np.concatenate(cols, axis=-1)


def extract(combo, others, top_k: int = 1) -> np.ndarray:
    """Map theta_-i (any order) to the feature vector of ``combo``."""
    combo = FeatureCombo.parse(combo)
    others = np.asarray(others, dtype=np.float64)
    if combo is not FeatureCombo.RAW and others.shape[-1] < 2:
        raise ValueError("feature reduction needs at least two other agents")
    return extract_sorted(combo, sort_desc(others), top_k)


def _std_vjp(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # d std / dx_j = (x_j - mean) / (k * std); zero where std vanishes
    k = x.shape[-1]
    centred = x - x.mean(axis=-1, keepdims=True)
    sd = np.sqrt(np.mean(centred**2, axis=-1, keepdims=True))
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, centred / (k * safe), 0.0) * g[..., None]


def _jump_vjp(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    gaps = s[..., :-1] - s[..., 1:]
    j = np.argmax(gaps, axis=-1)
    out = np.zeros_like(s)
    rows = np.arange(s.shape[0])
    out[rows, j] += g
    out[rows, j + 1] -= g
    return out


def feature_vjp(combo: FeatureCombo, s: np.ndarray, gfeat: np.ndarray, top_k: int = 1) -> np.ndarray:
    """Pull a gradient w.r.t. features back onto the sorted rows ``s`` (2-D)."""
    if combo is FeatureCombo.RAW:
        return gfeat
    gs = np.zeros_like(s)
    gs[:, :top_k] += gfeat[:, :top_k]
    extra = gfeat[:, top_k:]
    if combo is FeatureCombo.C1:
        gs[:, top_k:] += extra[:, :1]
    elif combo is FeatureCombo.C2:
        gs[:, 0] += extra[:, 0]
        gs[:, -1] -= extra[:, 0]
    elif combo is FeatureCombo.C3:
        gs += _std_vjp(s, extra[:, 0])
    elif combo is FeatureCombo.C4:
        gs[:, top_k:] += _std_vjp(s[:, top_k:], extra[:, 0])
    elif combo is FeatureCombo.C5:
        gs += _jump_vjp(s, extra[:, 0])
    elif combo is FeatureCombo.C6:
        gs[:, -1] += extra[:, 0]
        gs += _jump_vjp(s, extra[:, 1])
    elif combo is FeatureCombo.C7:
        gs[:, top_k:] += extra[:, :1]
        gs += _jump_vjp(s, extra[:, 1])
    elif combo is FeatureCombo.C8:
        gs[:, -1] += extra[:, 0]
        gs[:, top_k:] += extra[:, 1:2]
    return gs
