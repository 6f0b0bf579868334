"""Type priors on [0, 1] and the coordinate-replacement resampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Prior:
    kind: str = "uniform"
    mean: float = 0.5
    std: float = 0.1
    # density convention used for FEED weights: "e" is the plain density,
    # "10" evaluates 10 ** log_density literally
    pdf_base: str = "e"

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "normal" and not self.std > 0:
            raise ValueError("normal prior needs std > 0")
        if self.pdf_base not in ("e", "10"):
            raise ValueError("pdf_base must be 'e' or '10'")

    def __str__(self) -> str:
        if self.kind == "uniform":
            return "uniform"
        return f"normal:{self.mean:g}:{self.std:g}"


def parse_prior(text: str, pdf_base: str = "e") -> Prior:
    """Parse ``uniform`` or ``normal:<mean>:<std>``."""
    parts = str(text).strip().lower().split(":")
    if parts == ["uniform"]:
        return Prior("uniform", pdf_base=pdf_base)
    if parts[0] == "normal" and len(parts) == 3:
        try:
            mean, std = float(parts[1]), float(parts[2])
        except ValueError:
            raise ValueError(f"bad normal prior parameters in {text!r}") from None
        return Prior("normal", mean, std, pdf_base=pdf_base)
    raise ValueError(f"cannot parse prior {text!r}; use 'uniform' or 'normal:mean:std'")


def _truncated_normal(mean: float, std: float, size: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        draw = rng.normal(mean, std, size=max(2 * need, 16))
        draw = draw[(draw >= 0.0) & (draw <= 1.0)][:need]
        out[filled : filled + draw.size] = draw
        filled += draw.size
    return out


def sample_profiles(prior: Prior, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent profiles of ``n`` types, shape (size, n)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if prior.kind == "uniform":
        return rng.random((size, n))
    return _truncated_normal(prior.mean, prior.std, size * n, rng).reshape(size, n)


def sample_profile(prior: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    return sample_profiles(prior, n, 1, rng)[0]


def _check_domain(x: np.ndarray) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("density is only defined on [0, 1]")


def pdf(prior: Prior, x):
    """Untruncated density of the prior at ``x`` (scalar or array)."""
    arr = np.asarray(x, dtype=np.float64)
    _check_domain(arr)
    if prior.kind == "uniform":
        dens = np.ones_like(arr)
    else:
        z = (arr - prior.mean) / prior.std
        dens = np.exp(-0.5 * z * z) / (prior.std * _SQRT_2PI)
    if prior.pdf_base == "10":
        dens = 10.0 ** np.log(dens)
    return float(dens) if dens.ndim == 0 else dens


def truncation_mass(prior: Prior) -> float:
    """Probability mass the untruncated prior puts on [0, 1]."""
    if prior.kind == "uniform":
        return 1.0
    cdf = lambda t: 0.5 * (1.0 + math.erf((t - prior.mean) / (prior.std * math.sqrt(2.0))))
    return cdf(1.0) - cdf(0.0)


def pdf_truncated(prior: Prior, x):
    """Density renormalised to integrate to one over [0, 1] (natural base)."""
    plain = Prior(prior.kind, prior.mean, prior.std, "e")
    return pdf(plain, x) / truncation_mass(prior)


@dataclass(frozen=True)
class FeedSample:
    profile: np.ndarray
    replaced_index: int
    replaced_value: float
    weight: float


def feed_resample_batch(profiles: np.ndarray, prior: Prior, rng: np.random.Generator):
    """Replace one uniformly chosen coordinate per row with a Uniform(0,1) draw.

    Returns ``(new_profiles, indices, values, weights)`` where each weight is
    the prior density at the replacement value.
    """
    profiles = np.array(profiles, dtype=np.float64, copy=True)
    b, n = profiles.shape
    idx = rng.integers(0, n, size=b)
    vals = rng.random(b)
    profiles[np.arange(b), idx] = vals
    return profiles, idx, vals, np.asarray(pdf(prior, vals), dtype=np.float64)


def feed_resample(profile, prior: Prior, rng: np.random.Generator) -> FeedSample:
    new, idx, vals, w = feed_resample_batch(np.asarray(profile, dtype=np.float64)[None, :], prior, rng)
    return FeedSample(new[0], int(idx[0]), float(vals[0]), float(w[0]))


def feed_with(profile, index: int, value: float, prior: Prior) -> FeedSample:
    """Deterministic replacement, mostly useful for inspection and tests."""
    new = np.array(profile, dtype=np.float64, copy=True)
    new[index] = value
    return FeedSample(new, int(index), float(value), float(pdf(prior, value)))
