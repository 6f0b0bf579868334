import json

import numpy as np
import pytest

from redistnet.adversary import Generator, create_pool
from redistnet.evaluation import (
    EXPECTATION_BASELINES,
    WORST_CASE_BASELINES,
    build_test_set,
    compare_with_baselines,
    default_test_size,
    evaluate,
    format_table,
    grid_audit,
    grid_profiles,
    write_report,
)
from redistnet.priors import Prior
from redistnet.reference import ConstantShare, FallbackMax

UNIFORM = Prior("uniform")


@pytest.mark.parametrize("n, size", [(4, 10_000), (5, 20_000), (7, 20_000), (9, 50_000), (10, 100_000)])
def test_default_sizes(n, size):
    assert default_test_size(n) == size


def test_published_constants():
    assert WORST_CASE_BASELINES[4][3] == 0.625 and WORST_CASE_BASELINES[4][4] == 0.634
    assert WORST_CASE_BASELINES[10][3] == 0.550
    assert WORST_CASE_BASELINES[7][0] is None
    assert EXPECTATION_BASELINES[3] == (2.079, 2.101)
    assert EXPECTATION_BASELINES[5][0] == 4.061


def test_constant_share_violations_counted():
    P = np.array([[0.9, 0.8, 0.1], [0.1, 0.1, 0.1], [0.5, 0.5, 0.5]])
    r = evaluate(ConstantShare(3), P, 3)
    assert r.violation_count == 2
    assert not r.feasible
    assert "INFEASIBLE" in r.summary()


def test_fallback_alpha_on_witness_set():
    P = np.vstack([np.eye(4)[0], np.random.default_rng(0).random((500, 4))])
    r = evaluate(FallbackMax(4), P, 4)
    assert r.alpha_estimate == pytest.approx(0.25)
    assert r.alpha_estimate == 4 - r.max_ratio_stat
    assert r.feasible and r.violation_count == 0


def test_histogram_and_summary():
    P = np.random.default_rng(1).random((1000, 3))
    r = evaluate(FallbackMax(3), P, 3, bins=50)
    assert sum(r.hist_counts) == 1000 and len(r.hist_edges) == 51
    assert r.summary().startswith("alpha=")


def test_order_invariance_and_monotone_max():
    P = np.random.default_rng(2).random((2000, 4))
    h = FallbackMax(4)
    a = evaluate(h, P, 4)
    b = evaluate(h, P[::-1], 4)
    assert a.alpha_estimate == b.alpha_estimate and a.violation_count == b.violation_count
    bigger = evaluate(h, np.vstack([P, np.eye(4)[:1]]), 4)
    assert bigger.max_ratio_stat >= a.max_ratio_stat


def test_workers_do_not_change_result():
    P = np.random.default_rng(3).random((20_000, 3))
    a = evaluate(FallbackMax(3), P, 3)
    b = evaluate(FallbackMax(3), P, 3, workers=3)
    assert a.to_dict() == b.to_dict()


def test_evaluate_rejects_wrong_shape():
    with pytest.raises(ValueError):
        evaluate(FallbackMax(3), np.zeros((4, 4)), 3)
    with pytest.raises(ValueError):
        evaluate(FallbackMax(3), np.zeros((0, 3)), 3)


def test_build_test_set_mixes_generator_and_prior():
    rng = np.random.default_rng(0)
    pool = create_pool(3, 2, rng)
    P = build_test_set(3, UNIFORM, pool, 100, np.random.default_rng(1))
    assert P.shape == (100, 3) and np.all((P >= 0) & (P <= 1))
    Q = build_test_set(3, UNIFORM, pool, 100, np.random.default_rng(1))
    np.testing.assert_array_equal(P, Q)
    assert build_test_set(3, UNIFORM, None, None, rng).shape == (10_000, 3)
    with pytest.raises(ValueError):
        build_test_set(4, UNIFORM, Generator.create(3, rng), 10, rng)


def test_grid_audit_matches_fallback_theory():
    assert len(grid_profiles(4, 0.1)) == 1001
    alpha, lo = grid_audit(FallbackMax(4), 4, 0.1)
    assert alpha == pytest.approx(0.25)
    assert lo >= 3 - 1e-12
    with pytest.raises(ValueError):
        grid_profiles(3, 0.3)


def test_compare_rows():
    rows = compare_with_baselines(None, 4)
    assert [r["mechanism"] for r in rows] == ["SBR", "ABR", "AMD", "AO", "GAN+MLP", "UB"]
    assert "n too large" in format_table(compare_with_baselines(None, 8), 8)
    assert compare_with_baselines(None, 11) == []
    assert "no published row" in format_table([], 11)
    ex = compare_with_baselines(None, 3, "expectation")
    assert ex[0]["expectation"] == 2.079


def test_write_report(tmp_path):
    P = np.random.default_rng(4).random((300, 4))
    r = evaluate(FallbackMax(4), P, 4, bins=20)
    paths = write_report(r, tmp_path, "x")
    data = json.loads(paths["json"].read_text())
    assert data["alpha_estimate"] == r.alpha_estimate
    lines = paths["histogram"].read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,count" and len(lines) == 21
    assert "this run" in paths["comparison"].read_text()
    # same input, same bytes
    again = write_report(evaluate(FallbackMax(4), P, 4, bins=20), tmp_path / "b", "x")
    for key in paths:
        assert paths[key].read_bytes() == again[key].read_bytes()
