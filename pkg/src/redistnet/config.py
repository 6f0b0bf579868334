"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` (and anything after an inline ``#``) are comments.
``n``, ``objective`` and ``prior`` are required; every other key has a
default, and ``auto`` picks the objective- or n-dependent default.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .features import FeatureCombo, default_combo
from .losses import EXPECTATION_EPSILON, WORSTCASE_EPSILON
from .priors import Prior, parse_prior
from .reference import ConfigError, default_warm_start

__all__ = ["ConfigError", "TrainConfig", "load_config", "make_config", "parse_config_text", "stream"]


OBJECTIVES = ("worstcase", "expectation")
WARM_STARTS = ("auto", "fallback", "ao", "constant", "none")
REQUIRED = ("n", "objective", "prior")

# named sub-streams of the root seed
STREAMS = {"init_h": 0, "init_gen": 1, "warm": 2, "train": 3, "adversary": 4, "val": 5, "eval": 6, "audit": 7, "select": 8}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from ``seed`` for one purpose."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.PCG64(ss))


# one-line description per key, shown by ``--help``
KEY_DOCS = {
    "n": "number of agents (required)",
    "objective": "worstcase or expectation (required)",
    "prior": "uniform or normal:MEAN:STD, truncated to [0,1] (required)",
    "features": "raw, c1..c8 or auto (c8 for n >= 5, raw below)",
    "top_k": "how many of the largest others enter reduced features",
    "hidden": "comma-separated hidden widths of the h-network",
    "batch_size": "profiles per h-network step",
    "epsilon": "weight of the upper hinge; auto = 0.01 worst-case, 1e-4 expectation",
    "alpha_target_init": "initial target ratio, or auto (see alpha_target_floor)",
    "alpha_target_margin": "auto init starts this far below the warm-start worst ratio",
    "alpha_target_floor": "auto init never starts below this value",
    "alpha_target_step": "curriculum increment of the target ratio",
    "curriculum_every": "steps between curriculum checks",
    "curriculum_tol": "max validation violation allowed for a curriculum raise",
    "stall_window": "steps without a raise before a stall is reported",
    "adv_ratio": "h-steps per adversary step (one update of every pool member); inf, 0 or off disables it",
    "adv_batch": "noise samples per adversary step",
    "adv_pool": "number of independently initialised generators",
    "adv_warmup": "adversary steps per generator before h training starts",
    "burn_in": "validations up to this step count neither for early stopping nor selection",
    "select_top": "feasible snapshots kept for final selection (0 keeps the last iterate)",
    "select_audit_size": "prior profiles used to re-check expectation snapshots",
    "select_adv_steps": "adversary steps per generator when re-auditing each snapshot",
    "warm_start": "auto, fallback, ao, constant or none",
    "warm_start_steps": "step cap of the supervised warm start",
    "warm_start_tol": "warm start stops below this validation MSE",
    "feed": "resample one coordinate and weight by the prior pdf (expectation)",
    "pdf_base": "e or 10, base of the pdf used as FEED weight",
    "seed": "root seed; every random stream derives from it",
    "max_steps": "h-network step cap",
    "checkpoint_every": "steps between periodic checkpoints",
    "lr": "initial Adam learning rate",
    "lr_decay": "learning-rate factor applied every decay_every steps",
    "decay_every": "steps per learning-rate decay",
    "val_every": "steps between validations",
    "val_size": "held-out validation profiles",
    "early_stop_windows": "stop after this many validations without improvement; auto = 25 worst-case, 5 expectation",
    "early_stop_delta": "smallest improvement that counts",
    "eval_size": "final test-set size; auto = per-n table (worst-case) or 20000",
    "tolerance": "violation tolerance relative to n-1",
    "workers": "threads for batch evaluation",
}


@dataclass
class TrainConfig:
    n: int
    objective: str
    prior: str
    features: str = "auto"
    top_k: int = 1
    hidden: str = "100,100,100,100,100,100"
    batch_size: int = 64
    epsilon: str = "auto"
    alpha_target_init: str = "auto"
    alpha_target_margin: float = 0.02
    alpha_target_floor: float = 0.6
    alpha_target_step: float = 0.005
    curriculum_every: int = 500
    curriculum_tol: float = 1e-4
    stall_window: int = 10_000
    adv_ratio: str = "5"
    adv_batch: int = 64
    adv_pool: int = 8
    adv_warmup: int = 1_000
    burn_in: int = 2_000
    select_top: int = 5
    select_adv_steps: int = 200
    select_audit_size: int = 100_000
    warm_start: str = "auto"
    warm_start_steps: int = 20_000
    warm_start_tol: float = 1e-5
    feed: bool = True
    pdf_base: str = "e"
    seed: int = 0
    max_steps: int = 50_000
    checkpoint_every: int = 5_000
    lr: float = 1e-3
    lr_decay: float = 0.98
    decay_every: int = 100
    val_every: int = 200
    val_size: int = 2_000
    early_stop_windows: str = "auto"
    early_stop_delta: float = 1e-5
    eval_size: str = "auto"
    tolerance: float = 1e-3
    workers: int = 1

    def __post_init__(self):
        self.validate()

    # -- resolved views -----------------------------------------------------
    @property
    def prior_obj(self) -> Prior:
        return parse_prior(self.prior, self.pdf_base)

    @property
    def combo(self) -> FeatureCombo:
        if self.features == "auto":
            return default_combo(self.n)
        return FeatureCombo.parse(self.features)

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.hidden.split(",") if x.strip())

    @property
    def epsilon_value(self) -> float:
        if self.epsilon == "auto":
            return WORSTCASE_EPSILON if self.objective == "worstcase" else EXPECTATION_EPSILON
        return float(self.epsilon)

    @property
    def adv_ratio_value(self) -> float:
        return math.inf if self.adv_ratio in ("inf", "0", "off") else float(int(self.adv_ratio))

    @property
    def early_stop_windows_value(self) -> int:
        # adversarial validation sets move every step, so worst-case runs get more patience
        if self.early_stop_windows == "auto":
            return 25 if self.objective == "worstcase" else 5
        return int(self.early_stop_windows)

    @property
    def warm_start_kind(self) -> str:
        return default_warm_start() if self.warm_start == "auto" else self.warm_start

    @property
    def eval_size_value(self) -> int | None:
        if self.eval_size == "auto":
            return None if self.objective == "worstcase" else 20_000
        return int(self.eval_size)

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"invalid value for '{key}': {why}")

        if self.n < 2:
            bad("n", "need at least 2 agents")
        if self.objective not in OBJECTIVES:
            bad("objective", f"expected one of {', '.join(OBJECTIVES)}")
        try:
            parse_prior(self.prior, self.pdf_base)
        except ValueError as exc:
            key = "pdf_base" if "pdf_base" in str(exc) else "prior"
            bad(key, exc)
        try:
            combo = self.combo
        except ValueError as exc:
            bad("features", exc)
        if combo is not FeatureCombo.RAW and not 1 <= self.top_k < self.n - 1:
            bad("top_k", f"must be in [1, {self.n - 2}]")
        if combo is not FeatureCombo.RAW and self.n < 3:
            bad("features", "feature reduction needs n >= 3")
        try:
            hidden = self.hidden_sizes
        except ValueError:
            bad("hidden", "comma-separated integers expected")
        if not hidden or min(hidden) < 1:
            bad("hidden", "need positive layer widths")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if self.max_steps < 0:
            bad("max_steps", "must be >= 0")
        if self.warm_start not in WARM_STARTS:
            bad("warm_start", f"expected one of {', '.join(WARM_STARTS)}")
        try:
            eps = self.epsilon_value
        except ValueError:
            bad("epsilon", "number or 'auto' expected")
        if not eps > 0:
            bad("epsilon", "must be positive")
        if self.alpha_target_init != "auto":
            try:
                a = float(self.alpha_target_init)
            except ValueError:
                bad("alpha_target_init", "number or 'auto' expected")
            if not 0 < a <= 1:
                bad("alpha_target_init", "must lie in (0, 1]")
        try:
            windows = self.early_stop_windows_value
        except ValueError:
            bad("early_stop_windows", "integer or 'auto' expected")
        if windows < 0:
            bad("early_stop_windows", "must be >= 0")
        if not 0 <= self.alpha_target_floor <= 1:
            bad("alpha_target_floor", "must lie in [0, 1]")
        if self.burn_in < 0:
            bad("burn_in", "must be >= 0")
        if self.select_top < 0 or self.select_adv_steps < 0:
            bad("select_top" if self.select_top < 0 else "select_adv_steps", "must be >= 0")
        try:
            ratio = self.adv_ratio_value
        except ValueError:
            bad("adv_ratio", "integer or 'inf' expected")
        if ratio < 1:
            bad("adv_ratio", "must be >= 1 or 'inf'")
        if self.eval_size != "auto":
            try:
                size = int(self.eval_size)
            except ValueError:
                bad("eval_size", "integer or 'auto' expected")
            if size < 2:
                bad("eval_size", "must be >= 2")
        for key in ("val_every", "val_size", "curriculum_every", "checkpoint_every", "decay_every", "workers", "adv_batch", "adv_pool", "select_audit_size"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")

    # -- (de)serialisation --------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(TrainConfig) if not f.name.startswith("_")}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': {raw!r} is not a valid {kind}") from None
    return text.lower() if key in (
        "objective", "features", "warm_start", "adv_ratio", "eval_size", "epsilon", "alpha_target_init", "early_stop_windows"
    ) else text


def parse_pairs(pairs: dict[str, str]) -> dict:
    out = {}
    for key, raw in pairs.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        out[key] = _coerce(key, raw)
    return out


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> TrainConfig:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        pairs[key] = value
    pairs.update(overrides or {})
    values = parse_pairs(pairs)
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required config key '{key}'")
    return TrainConfig(**values)


def load_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides)


def make_config(**kw) -> TrainConfig:
    """Build a config from Python values (strings for the string-typed keys)."""
    for key in kw:
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
    for key in REQUIRED:
        if key not in kw:
            raise ConfigError(f"missing required config key '{key}'")
    str_keys = {k for k, f in _FIELDS.items() if f.type == "str"}
    kw = {k: (str(v) if k in str_keys else v) for k, v in kw.items()}
    return TrainConfig(**kw)
