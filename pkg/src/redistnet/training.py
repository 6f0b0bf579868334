"""End-to-end training pipelines.

Both objectives start from a supervised warm start toward a manual
mechanism.  The worst-case pipeline then alternates penalty descent on
mixed generator/prior batches with generator updates and tightens the
target ratio by curriculum.  The expectation pipeline runs PDF-weighted
(FEED) penalty descent on prior samples.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adversary import Generator, adversary_step, create_pool, generate_batch, generate_from_noise, train_pool
from .config import TrainConfig, stream
from .evaluation import EvalReport, build_test_set, evaluate, write_report
from .features import extract_sorted
from .hnet import NeuralRedistribution, SumHPass, init_h_network
from .losses import (
    LossWeights,
    expectation_loss,
    expectation_loss_grad,
    worstcase_loss,
    worstcase_loss_grad,
)
from .neuralnet import AdamState, DivergenceError, MlpParams, adam_step, backward, forward, save_checkpoint
from .priors import feed_resample_batch, sample_profiles
from .reference import manual_mechanism

log = logging.getLogger(__name__)

CURVE_FIELDS = ("step", "train_loss", "val_loss", "alpha_target", "violations")


@dataclass
class WarmStartResult:
    params: MlpParams
    steps: int
    val_mse: float
    converged: bool
    target: str


@dataclass
class TrainReport:
    objective: str
    n: int
    steps_run: int = 0
    stopped_early: bool = False
    warm_start: dict = field(default_factory=dict)
    curves: list[dict] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    alpha_target: float | None = None
    curriculum_stalled: bool = False
    selected_step: int | None = None
    final_eval: dict = field(default_factory=dict)
    final_checkpoint: str | None = None  # relative to the run directory
    wall_clock: float = field(default=0.0, compare=False)
    model: NeuralRedistribution | None = field(default=None, repr=False, compare=False)
    generators: list[Generator] | None = field(default=None, repr=False, compare=False)

    @property
    def alpha_estimate(self) -> float | None:
        return self.final_eval.get("alpha_estimate")

    @property
    def expectation_estimate(self) -> float | None:
        return self.final_eval.get("expectation_estimate")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("model", "generators", "wall_clock"):
            d.pop(key)
        return d


def _adam(params: MlpParams, cfg: TrainConfig) -> AdamState:
    return AdamState.for_params(params, lr=cfg.lr, decay=cfg.lr_decay, decay_every=cfg.decay_every)


def _check(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite at step {step}")


# -- warm start ----------------------------------------------------------------


def warm_start(cfg: TrainConfig) -> WarmStartResult:
    """Fresh h-network, supervised toward the configured manual mechanism.

    Training inputs are theta_-i of Uniform(0,1) profiles so the whole
    domain is covered regardless of the prior.  Stops once the validation
    MSE drops below ``warm_start_tol`` or after ``warm_start_steps`` steps.
    """
    n, combo = cfg.n, cfg.combo
    params = init_h_network(n, combo, stream(cfg.seed, "init_h"), cfg.hidden_sizes, cfg.top_k)
    kind = cfg.warm_start_kind
    if kind == "none":
        return WarmStartResult(params, 0, float("nan"), False, kind)
    target = manual_mechanism(kind, n)
    rng = stream(cfg.seed, "warm")

    def batch_inputs(size):
        s = -np.sort(-rng.random((size, n - 1)), axis=1)
        return extract_sorted(combo, s, cfg.top_k), target.evaluate_sorted(s)

    val_x, val_y = batch_inputs(cfg.val_size)
    opt = _adam(params, cfg)
    mse = float(np.mean((forward(params, val_x)[0][:, 0] - val_y) ** 2))
    step = 0
    rows = cfg.batch_size * n
    while step < cfg.warm_start_steps and mse >= cfg.warm_start_tol:
        x, y = batch_inputs(rows)
        out, trace = forward(params, x)
        err = out[:, 0] - y
        _check(float(err @ err), "warm-start loss", step)
        gw, gb, _ = backward(params, trace, (2.0 / rows) * err[:, None])
        adam_step(params, gw, gb, opt)
        step += 1
        if step % cfg.val_every == 0 or step == cfg.warm_start_steps:
            mse = float(np.mean((forward(params, val_x)[0][:, 0] - val_y) ** 2))
    return WarmStartResult(params, step, mse, mse < cfg.warm_start_tol, kind)


# -- shared bookkeeping ----------------------------------------------------------


class _RunWriter:
    """Checkpoints, loss CSV and config snapshot for one run directory."""

    def __init__(self, cfg: TrainConfig, run_dir):
        self.cfg = cfg
        self.dir = Path(run_dir) if run_dir is not None else None
        if self.dir is not None:
            (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
            (self.dir / "config.txt").write_text(self.cfg.to_text())

    def meta(self, role: str, step: int, **extra) -> dict:
        c = self.cfg
        meta = {
            "role": role,
            "n": c.n,
            "objective": c.objective,
            "prior": c.prior,
            "pdf_base": c.pdf_base,
            "features": c.combo.value,
            "top_k": c.top_k,
            "seed": c.seed,
            "step": step,
        }
        meta.update(extra)
        return meta

    def checkpoint(self, h: NeuralRedistribution, gens, step: int, final: bool = False, **extra):
        if self.dir is None:
            return None
        prefix = "" if final else f"checkpoints/step{step:07d}_"
        path = save_checkpoint(self.dir / f"{prefix}model.npz", h.params, self.meta("model", step, **extra))
        for k, g in enumerate(gens or []):
            meta = self.meta("adversary", step, pool_index=k, pool_size=len(gens))
            save_checkpoint(self.dir / f"{prefix}adversary_{k:02d}.npz", g.net, meta)
        return path.relative_to(self.dir).as_posix()

    def finish(self, report: TrainReport, final_eval: EvalReport | None) -> None:
        if self.dir is None:
            return
        with (self.dir / "loss.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
            writer.writeheader()
            for row in report.curves:
                writer.writerow({k: ("" if row[k] is None else row[k]) for k in CURVE_FIELDS})
        (self.dir / "train_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        if final_eval is not None:
            write_report(final_eval, self.dir / "eval", "final", self.cfg.objective)
        with (self.dir / "run.log").open("a") as fh:
            fh.write(
                f"objective={self.cfg.objective} n={self.cfg.n} seed={self.cfg.seed} "
                f"steps={report.steps_run} wall_clock={report.wall_clock:.1f}s\n"
            )


class _EarlyStop:
    """Stop when the best metric of the last ``windows`` checks beats the earlier best by < delta."""

    def __init__(self, windows: int, delta: float):
        self.windows, self.delta = windows, delta
        self.history: list[float] = []

    def update(self, metric: float) -> bool:
        self.history.append(metric)
        if self.windows <= 0 or len(self.history) <= self.windows:
            return False
        before = min(self.history[: -self.windows])
        recent = min(self.history[-self.windows :])
        return before - recent < self.delta


def _ratios_and_S(h: NeuralRedistribution, profiles: np.ndarray):
    fwd = SumHPass(h, profiles)
    S = np.maximum(profiles.sum(axis=1), 1.0)
    return fwd, S


def _final_eval(cfg: TrainConfig, h: NeuralRedistribution, gen) -> EvalReport:
    test = build_test_set(cfg.n, cfg.prior_obj, gen, cfg.eval_size_value, stream(cfg.seed, "eval"))
    return evaluate(h, test, cfg.n, cfg.tolerance, workers=cfg.workers)


# -- worst case -------------------------------------------------------------------


def _validate_worstcase(cfg, h, gens, val_random, val_noise, weights):
    parts = [val_random]
    if gens:
        parts.append(generate_from_noise(gens, val_noise))
    profiles = np.concatenate(parts)
    fwd, S = _ratios_and_S(h, profiles)
    ratio = fwd.sum_h / S
    n = cfg.n
    loss = float(np.mean(worstcase_loss(fwd.sum_h, S, n, weights)))
    max_violation = float(max(0.0, (n - 1) - ratio.min()))
    violations = int(np.count_nonzero(ratio - (n - 1) < -cfg.tolerance * (n - 1)))
    return {
        "val_loss": loss,
        "worst_ratio": float(n - ratio.max()),
        "min_ratio": float(ratio.min()),
        "max_violation": max_violation,
        "violations": violations,
        "metric": float(ratio.max() - (n - 1)) + max_violation,
    }


class _Candidates:
    """The ``size`` lowest-metric validated parameter snapshots without violations."""

    def __init__(self, size: int):
        self.size = size
        self.items: list[tuple[float, int, MlpParams]] = []

    def offer(self, val: dict, params: MlpParams, step: int) -> None:
        if self.size == 0 or val["violations"] != 0:
            return
        self.items.append((val["metric"], step, params.copy()))
        self.items.sort(key=lambda t: (t[0], -t[1]))
        del self.items[self.size :]


def _select_worstcase(cfg, h, gens, candidates: _Candidates, last_step, val_random, val_noise):
    """Re-audit the stored snapshots and the last iterate, then keep the best feasible one.

    Each snapshot faces its own copy of the generator pool, first adapted
    to it for ``select_adv_steps`` steps per member, so a snapshot cannot
    win merely because the pool had drifted away from it.  Returns the
    chosen step and the pool adapted to the chosen parameters.
    """
    if cfg.select_top == 0:
        return last_step, gens
    pool_items = [(step, params) for _, step, params in candidates.items if step != last_step]
    pool_items.append((last_step, h.params))
    pool_items.sort(key=lambda t: t[0])
    weights = LossWeights(cfg.epsilon_value, 1.0)
    rng = stream(cfg.seed, "select")
    best = None
    for step, params in pool_items:
        hc = NeuralRedistribution(params, cfg.n, cfg.combo, cfg.top_k)
        pool = [Generator(g.net.copy(), g.n) for g in gens]
        for g in pool:
            opt = _adam(g.net, cfg)
            for _ in range(cfg.select_adv_steps):
                adversary_step(g, hc, cfg.adv_batch, opt, rng)
        val = _validate_worstcase(cfg, hc, pool, val_random, val_noise, weights)
        log.info("snapshot step %d: worst ratio %.4f, violations %d", step, val["worst_ratio"], val["violations"])
        if val["violations"] == 0 and (best is None or val["metric"] < best[0]):
            best = (val["metric"], step, params, pool)
    if best is None:
        return last_step, gens
    _, step, params, pool = best
    h.params = params
    return step, pool


def _select_expectation(cfg, h, candidates: _Candidates, last_step, weights):
    """Re-check the stored snapshots and the last iterate on a large audit set.

    The validation set is too small to see rare infeasible regions, such as
    profiles with a sum below 1.  The feasible snapshot with the lowest
    audit metric wins.  If none is feasible the one with fewest violations
    is kept.
    """
    if cfg.select_top == 0:
        return last_step
    items = [(step, params) for _, step, params in candidates.items if step != last_step]
    items.append((last_step, h.params))
    items.sort(key=lambda t: t[0])
    audit = sample_profiles(cfg.prior_obj, cfg.n, cfg.select_audit_size, stream(cfg.seed, "select"))
    best = None
    for step, params in items:
        hc = NeuralRedistribution(params, cfg.n, cfg.combo, cfg.top_k)
        val = _validate_expectation(cfg, hc, audit, weights)
        log.info("snapshot step %d: E %.4f, violations %d", step, val["expectation"], val["violations"])
        key = (val["violations"], val["metric"])
        if best is None or key < best[0]:
            best = (key, step, params)
    _, step, params = best
    h.params = params
    return step


def train_worstcase(cfg: TrainConfig, run_dir=None, ws: WarmStartResult | None = None) -> TrainReport:
    if cfg.objective != "worstcase":
        raise ValueError("train_worstcase needs objective=worstcase")
    t0 = time.perf_counter()
    n, prior = cfg.n, cfg.prior_obj
    ws = warm_start(cfg) if ws is None else ws
    h = NeuralRedistribution(ws.params, n, cfg.combo, cfg.top_k)
    use_adv = math.isfinite(cfg.adv_ratio_value)
    gens = create_pool(n, cfg.adv_pool, stream(cfg.seed, "init_gen")) if use_adv else []
    writer = _RunWriter(cfg, run_dir)
    report = TrainReport("worstcase", n, model=h, generators=gens)
    report.warm_start = {"target": ws.target, "steps": ws.steps, "val_mse": ws.val_mse, "converged": ws.converged}

    vrng = stream(cfg.seed, "val")
    val_random = sample_profiles(prior, n, cfg.val_size - cfg.val_size // 2, vrng)
    val_noise = vrng.random((cfg.val_size // 2, n))
    train_rng = stream(cfg.seed, "train")
    adv_rng = stream(cfg.seed, "adversary")
    opt_h = _adam(h.params, cfg)
    opt_g = [_adam(g.net, cfg) for g in gens]

    for g, opt in zip(gens, opt_g):
        for _ in range(cfg.adv_warmup):
            adversary_step(g, h, cfg.adv_batch, opt, adv_rng)

    probe = _validate_worstcase(cfg, h, gens, val_random, val_noise, LossWeights(cfg.epsilon_value, 1.0))
    if cfg.alpha_target_init == "auto":
        alpha_t = max(probe["worst_ratio"] - cfg.alpha_target_margin, cfg.alpha_target_floor)
    else:
        alpha_t = float(cfg.alpha_target_init)
    alpha_t = min(max(alpha_t, cfg.alpha_target_step), 1.0)
    last_val = probe
    last_raise = 0
    report.curves.append({"step": 0, "train_loss": None, "val_loss": probe["val_loss"],
                          "alpha_target": alpha_t, "violations": probe["violations"]})
    report.metrics.append({"step": 0, **probe})
    stopper = _EarlyStop(cfg.early_stop_windows_value, cfg.early_stop_delta)
    # until burn_in the pool may still lag behind h, so early validations flatter it
    candidates = _Candidates(cfg.select_top)

    half = cfg.batch_size // 2 if gens else 0
    window_losses: list[float] = []
    step = 0
    while step < cfg.max_steps:
        step += 1
        weights = LossWeights(cfg.epsilon_value, alpha_t)
        rnd = sample_profiles(prior, n, cfg.batch_size - half, train_rng)
        batch = np.concatenate([generate_batch(gens, half, train_rng), rnd]) if half else rnd
        fwd, S = _ratios_and_S(h, batch)
        per = worstcase_loss(fwd.sum_h, S, n, weights)
        loss = float(per.mean())
        _check(loss, "worst-case loss", step)
        window_losses.append(loss)
        g = worstcase_loss_grad(fwd.sum_h, S, n, weights) / len(batch)
        gw, gb, _ = fwd.backward(g)
        adam_step(h.params, gw, gb, opt_h)

        if gens and step % int(cfg.adv_ratio_value) == 0:
            for g, opt in zip(gens, opt_g):
                res = adversary_step(g, h, cfg.adv_batch, opt, adv_rng)
                _check(res.loss, "adversary loss", step)

        stop = False
        if step % cfg.val_every == 0 or step == cfg.max_steps:
            last_val = _validate_worstcase(cfg, h, gens, val_random, val_noise, weights)
            report.curves.append({"step": step, "train_loss": float(np.mean(window_losses)),
                                  "val_loss": last_val["val_loss"], "alpha_target": alpha_t,
                                  "violations": last_val["violations"]})
            report.metrics.append({"step": step, **last_val})
            window_losses = []
            if step > cfg.burn_in:
                stop = stopper.update(last_val["metric"])
                candidates.offer(last_val, h.params, step)
        if step % cfg.curriculum_every == 0:
            if last_val["max_violation"] < cfg.curriculum_tol and last_val["worst_ratio"] > alpha_t and alpha_t < 1.0:
                alpha_t = min(1.0, alpha_t + cfg.alpha_target_step)
                last_raise = step
            elif step - last_raise >= cfg.stall_window and not report.curriculum_stalled:
                report.curriculum_stalled = True
                log.warning("alpha_target stuck at %.4f since step %d", alpha_t, last_raise)
        if step % cfg.checkpoint_every == 0:
            writer.checkpoint(h, gens, step, alpha_target=alpha_t)
        if stop:
            report.stopped_early = True
            break

    report.steps_run = step
    report.alpha_target = alpha_t
    report.selected_step, gens = _select_worstcase(cfg, h, gens, candidates, step, val_random, val_noise)
    report.generators = gens
    final = _final_eval(cfg, h, gens or None)
    report.final_eval = {k: v for k, v in final.to_dict().items() if not isinstance(v, list)}
    report.final_checkpoint = writer.checkpoint(h, gens, step, final=True, alpha_target=alpha_t)
    report.wall_clock = time.perf_counter() - t0
    writer.finish(report, final)
    return report


# -- optimal in expectation ------------------------------------------------------


def _validate_expectation(cfg, h, val_profiles, weights):
    fwd, S = _ratios_and_S(h, val_profiles)
    ratio = fwd.sum_h / S
    n = cfg.n
    return {
        "val_loss": float(np.mean(expectation_loss(fwd.sum_h, S, n, weights))),
        "expectation": float(ratio.mean()),
        "min_ratio": float(ratio.min()),
        "max_violation": float(max(0.0, (n - 1) - ratio.min())),
        "violations": int(np.count_nonzero(ratio - (n - 1) < -cfg.tolerance * (n - 1))),
        "metric": float(np.mean(np.abs(ratio - (n - 1)))),
    }


def train_expectation(cfg: TrainConfig, run_dir=None, ws: WarmStartResult | None = None) -> TrainReport:
    if cfg.objective != "expectation":
        raise ValueError("train_expectation needs objective=expectation")
    t0 = time.perf_counter()
    n, prior = cfg.n, cfg.prior_obj
    ws = warm_start(cfg) if ws is None else ws
    h = NeuralRedistribution(ws.params, n, cfg.combo, cfg.top_k)
    writer = _RunWriter(cfg, run_dir)
    report = TrainReport("expectation", n, model=h)
    report.warm_start = {"target": ws.target, "steps": ws.steps, "val_mse": ws.val_mse, "converged": ws.converged}
    weights = LossWeights(cfg.epsilon_value)

    val_profiles = sample_profiles(prior, n, cfg.val_size, stream(cfg.seed, "val"))
    rng = stream(cfg.seed, "train")
    opt = _adam(h.params, cfg)
    probe = _validate_expectation(cfg, h, val_profiles, weights)
    report.curves.append({"step": 0, "train_loss": None, "val_loss": probe["val_loss"],
                          "alpha_target": None, "violations": probe["violations"]})
    report.metrics.append({"step": 0, **probe})
    stopper = _EarlyStop(cfg.early_stop_windows_value, cfg.early_stop_delta)
    candidates = _Candidates(cfg.select_top)

    window_losses: list[float] = []
    step = 0
    while step < cfg.max_steps:
        step += 1
        batch = sample_profiles(prior, n, cfg.batch_size, rng)
        if cfg.feed:
            batch, _, _, w = feed_resample_batch(batch, prior, rng)
        else:
            w = np.ones(cfg.batch_size)
        fwd, S = _ratios_and_S(h, batch)
        loss = float(np.mean(expectation_loss(fwd.sum_h, S, n, weights) * w))
        _check(loss, "expectation loss", step)
        window_losses.append(loss)
        g = expectation_loss_grad(fwd.sum_h, S, n, weights) * w / cfg.batch_size
        gw, gb, _ = fwd.backward(g)
        adam_step(h.params, gw, gb, opt)

        stop = False
        if step % cfg.val_every == 0 or step == cfg.max_steps:
            val = _validate_expectation(cfg, h, val_profiles, weights)
            report.curves.append({"step": step, "train_loss": float(np.mean(window_losses)),
                                  "val_loss": val["val_loss"], "alpha_target": None,
                                  "violations": val["violations"]})
            report.metrics.append({"step": step, **val})
            window_losses = []
            if step > cfg.burn_in:
                # an infeasible validation never counts as an improvement
                stop = stopper.update(val["metric"] if val["violations"] == 0 else math.inf)
                candidates.offer(val, h.params, step)
        if step % cfg.checkpoint_every == 0:
            writer.checkpoint(h, None, step)
        if stop:
            report.stopped_early = True
            break

    report.steps_run = step
    report.selected_step = _select_expectation(cfg, h, candidates, step, weights)
    final = _final_eval(cfg, h, None)
    report.final_eval = {k: v for k, v in final.to_dict().items() if not isinstance(v, list)}
    report.final_checkpoint = writer.checkpoint(h, None, step, final=True)
    report.wall_clock = time.perf_counter() - t0
    writer.finish(report, final)
    return report


@dataclass
class ContrastReport:
    n: int
    train: TrainReport
    set_a: EvalReport
    set_b: EvalReport

    @property
    def drop(self) -> float:
        """How far the adversarial audit pushes the minimum ratio below the random one."""
        return self.set_a.min_ratio_stat - self.set_b.min_ratio_stat

    def table(self) -> str:
        rows = [("set", "size", "min ratio", "max ratio", "alpha", "violations")]
        for name, r in (("A random", self.set_a), ("B adversarial+random", self.set_b)):
            rows.append((name, str(r.test_size), f"{r.min_ratio_stat:.4f}", f"{r.max_ratio_stat:.4f}",
                         f"{r.alpha_estimate:.4f}", str(r.violation_count)))
        return "\n".join(f"{a:<22}{b:>8}{c:>12}{d:>12}{e:>9}{f:>12}" for a, b, c, d, e, f in rows) + "\n"


def contrast(cfg: TrainConfig, run_dir=None, audit_steps: int = 2000, set_size: int = 20_000) -> ContrastReport:
    """Train without an adversary, then audit with a freshly trained generator pool.

    Set A holds ``set_size`` prior samples; set B holds half generator
    output and half prior samples.
    """
    cfg = cfg.replace(objective="worstcase", adv_ratio="inf")
    rep = train_worstcase(cfg, None if run_dir is None else Path(run_dir) / "train")
    h = rep.model
    audit_rng = stream(cfg.seed, "audit")
    gens = train_pool(h, cfg.adv_pool, audit_steps, cfg.adv_batch, audit_rng, audit_rng,
                      cfg.lr, cfg.lr_decay, cfg.decay_every)
    rng = stream(cfg.seed, "eval")
    set_a = evaluate(h, build_test_set(cfg.n, cfg.prior_obj, None, set_size, rng), cfg.n, cfg.tolerance,
                     workers=cfg.workers)
    set_b = evaluate(h, build_test_set(cfg.n, cfg.prior_obj, gens, set_size, rng), cfg.n, cfg.tolerance,
                     workers=cfg.workers)
    out = ContrastReport(cfg.n, rep, set_a, set_b)
    if run_dir is not None:
        d = Path(run_dir)
        write_report(set_a, d, "set_a")
        write_report(set_b, d, "set_b")
        for k, g in enumerate(gens):
            meta = {"role": "adversary", "n": cfg.n, "seed": cfg.seed, "pool_index": k, "pool_size": len(gens),
                    "audit_steps": audit_steps}
            save_checkpoint(d / f"audit_adversary_{k:02d}.npz", g.net, meta)
        (d / "contrast.txt").write_text(out.table() + f"min ratio drop A-B: {out.drop:.4f}\n")
    return out


def train(cfg: TrainConfig, run_dir=None) -> TrainReport:
    if cfg.objective == "worstcase":
        return train_worstcase(cfg, run_dir)
    return train_expectation(cfg, run_dir)
