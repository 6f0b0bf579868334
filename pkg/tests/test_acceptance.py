"""End-to-end acceptance checks.

Each test records one pass/fail line (see conftest.py).  The training runs
are shared through session fixtures; the whole module takes about 20 minutes
on one CPU core.
"""

import itertools
import math
import time

import numpy as np
import pytest

from redistnet.cli import main
from redistnet.config import make_config
from redistnet.evaluation import build_test_set, evaluate, grid_audit
from redistnet.features import default_combo
from redistnet.hnet import NeuralRedistribution, init_h_network
from redistnet.mechanism import agent_utilities, outcome, ratio_stats
from redistnet.neuralnet import random_gradient_suite
from redistnet.priors import Prior
from redistnet.reference import ConstantShare, FallbackMax
from redistnet.training import contrast, train

pytestmark = pytest.mark.acceptance

UNIFORM = Prior("uniform")


def fresh_eval(rep, n, size=20_000, seed=2024):
    """Evaluate a trained expectation model on prior samples it has never seen."""
    P = build_test_set(n, UNIFORM, None, size, np.random.default_rng(seed))
    return evaluate(rep.model, P, n)


# -- shared training runs ------------------------------------------------------------


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return tmp_path_factory.mktemp("runs")


@pytest.fixture(scope="session")
def expectation_n3(runs):
    t = time.perf_counter()
    rep = train(make_config(n=3, objective="expectation", prior="uniform"), runs / "exp3")
    return rep, time.perf_counter() - t


@pytest.fixture(scope="session")
def expectation_n5_c8(runs):
    t = time.perf_counter()
    rep = train(make_config(n=5, objective="expectation", prior="uniform", features="c8"), runs / "exp5_c8")
    return rep, time.perf_counter() - t


@pytest.fixture(scope="session")
def expectation_n5_raw(runs):
    t = time.perf_counter()
    rep = train(make_config(n=5, objective="expectation", prior="uniform", features="raw"), runs / "exp5_raw")
    return rep, time.perf_counter() - t


@pytest.fixture(scope="session")
def worstcase_n4(runs):
    t = time.perf_counter()
    rep = train(make_config(n=4, objective="worstcase", prior="uniform"), runs / "wc4")
    return rep, time.perf_counter() - t


# -- criteria -----------------------------------------------------------------------


def test_c01_welfare_identity(record):
    t = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    ns = list(range(2, 11))
    per_n = math.ceil(10_000 / len(ns))
    for n in ns:
        combo = default_combo(n)
        neural = NeuralRedistribution(init_h_network(n, combo, rng), n, combo)
        for h in (FallbackMax(n), ConstantShare(n), neural):
            for theta in rng.random((per_n, n)) * rng.choice([0.3, 1.0], size=(per_n, 1)):
                direct = math.fsum(agent_utilities(theta, h))
                worst = max(worst, abs(outcome(theta, h).welfare - direct))
    dt = time.perf_counter() - t
    ok = worst <= 1e-9 and dt < 60
    record(1, ok, f"welfare identity max error {worst:.2e} over {per_n * len(ns)} profiles x 3 h ({dt:.0f}s)")
    assert ok


def test_c02_fallback_certification(record):
    t = time.perf_counter()
    levels = np.round(np.arange(0, 1 + 1e-9, 0.05), 10)[::-1]
    details, ok = [], True
    for n in range(2, 6):
        # sorted profiles cover the full grid because FallbackMax is anonymous
        P = np.array(list(itertools.combinations_with_replacement(levels, n)))
        r = ratio_stats(FallbackMax(n), P)
        violations = int(np.count_nonzero(r < n - 1 - 1e-12))
        alpha = n - r.max()
        witness = np.zeros(n)
        witness[0] = 1.0
        at_witness = n - ratio_stats(FallbackMax(n), witness[None, :])[0]
        ok &= violations == 0 and abs(alpha - 1 / n) < 1e-12 and abs(at_witness - 1 / n) < 1e-12
        details.append(f"n={n}: {violations} viol, alpha={alpha:.4f}")
    dt = time.perf_counter() - t
    ok &= dt < 300
    record(2, ok, "; ".join(details) + f" ({dt:.0f}s)")
    assert ok


def test_c03_gradient_correctness(record):
    t = time.perf_counter()
    err = random_gradient_suite(20, 10, seed=0)
    dt = time.perf_counter() - t
    ok = err < 1e-4 and dt < 60
    record(3, ok, f"max relative error {err:.2e} over 20 nets x 10 inputs ({dt:.0f}s)")
    assert ok


def test_c04_expectation_n3(expectation_n3, record):
    rep, dt = expectation_n3
    ev = fresh_eval(rep, 3)
    ok = 2.0 <= ev.expectation_estimate <= 2.15 and ev.violation_count == 0 and dt <= 1800
    record(4, ok, f"n=3 E={ev.expectation_estimate:.4f} (published 2.079), {ev.violation_count} violations, "
                  f"{rep.steps_run} steps, {dt:.0f}s")
    assert ok


def test_c05_expectation_n5_c8(expectation_n5_c8, record):
    rep, dt = expectation_n5_c8
    ev = fresh_eval(rep, 5)
    ok = 4.0 <= ev.expectation_estimate <= 4.25 and ev.violation_count == 0 and dt <= 3600
    record(5, ok, f"n=5 C8 E={ev.expectation_estimate:.4f} (published 4.061), {ev.violation_count} violations, "
                  f"{rep.steps_run} steps, {dt:.0f}s")
    assert ok


def test_c06_worstcase_n4(worstcase_n4, record):
    rep, dt = worstcase_n4
    ev = rep.final_eval
    ok = ev["alpha_estimate"] >= 0.55 and ev["violation_count"] == 0 and ev["test_size"] == 10_000 and dt <= 5400
    record(6, ok, f"n=4 alpha={ev['alpha_estimate']:.4f} (AO 0.625, published 0.634), "
                  f"{ev['violation_count']} violations on {ev['test_size']} mixed profiles, {dt:.0f}s")
    assert ok


def test_c07_contrast(runs, record):
    t = time.perf_counter()
    out = contrast(make_config(n=5, objective="worstcase", prior="uniform"), runs / "contrast5")
    dt = time.perf_counter() - t
    a, b = out.set_a.min_ratio_stat, out.set_b.min_ratio_stat
    # exhaustive lattice minimum: no auditor can go below it by more than lattice error
    _, grid_min = grid_audit(out.train.model, 5, 0.05)
    ok = b <= a - 1.0 and dt <= 3600
    record(7, ok, f"n=5 min ratio: set A {a:.4f}, set B {b:.4f}, drop {a - b:.4f}, "
                  f"0.05-grid min {grid_min:.4f} ({dt:.0f}s)")
    assert ok


def test_contrast_at_n10(runs, record):
    """The same contrast at n = 10, where random profiles never reach the corners."""
    t = time.perf_counter()
    out = contrast(make_config(n=10, objective="worstcase", prior="uniform"), runs / "contrast10")
    dt = time.perf_counter() - t
    a, b = out.set_a.min_ratio_stat, out.set_b.min_ratio_stat
    ok = b <= a - 1.0 and dt <= 3600
    record("7b", ok, f"n=10 min ratio: set A {a:.4f}, set B {b:.4f}, drop {a - b:.4f} ({dt:.0f}s)")
    assert ok


def test_c08_alpha_stable_across_sizes(worstcase_n4, record):
    rep, _ = worstcase_n4
    t = time.perf_counter()
    alphas = []
    for size in (10_000, 20_000, 100_000):
        P = build_test_set(4, UNIFORM, rep.generators, size, np.random.default_rng(size))
        alphas.append(evaluate(rep.model, P, 4).alpha_estimate)
    spread = max(alphas) - min(alphas)
    dt = time.perf_counter() - t
    ok = spread < 0.005 and dt <= 600
    record(8, ok, "alpha at 10k/20k/100k = " + "/".join(f"{a:.4f}" for a in alphas) + f", spread {spread:.4f}")
    assert ok


def test_c09_determinism(runs, expectation_n3, worstcase_n4, record):
    # repeat the n=3 training run and one evaluation command, compare bytes
    train(make_config(n=3, objective="expectation", prior="uniform"), runs / "exp3_again")
    names = ["model.npz", "loss.csv", "train_report.json", "config.txt", "eval/final.json",
             "eval/final_histogram.csv", "checkpoints/step0005000_model.npz"]
    same = [(runs / "exp3" / f).read_bytes() == (runs / "exp3_again" / f).read_bytes()
            for f in names if (runs / "exp3" / f).exists()]
    for k in (1, 2):
        main(["eval", str(runs / "wc4" / "model.npz"), "--out", str(runs / f"wc4_eval{k}")])
    for f in ("eval.json", "eval.csv", "eval_histogram.csv"):
        same.append((runs / "wc4_eval1" / f).read_bytes() == (runs / "wc4_eval2" / f).read_bytes())
    ok = all(same) and len(same) >= 9
    record(9, ok, f"{sum(same)}/{len(same)} repeated files bit-identical")
    assert ok


def test_c10_feature_reduction(expectation_n5_c8, expectation_n5_raw, record):
    c8, _ = expectation_n5_c8
    raw, dt = expectation_n5_raw
    e8 = fresh_eval(c8, 5).expectation_estimate
    eraw = fresh_eval(raw, 5).expectation_estimate
    ok = abs(e8 - eraw) <= 0.1 and c8.steps_run < raw.steps_run
    record(10, ok, f"n=5 E C8={e8:.4f} RAW={eraw:.4f} (diff {abs(e8 - eraw):.4f}); "
                   f"early stop C8 {c8.steps_run} vs RAW {raw.steps_run} steps")
    assert ok
