"""Auditing trained or manual mechanisms on large test sets."""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adversary import Generator, as_pool, generate_batch
from .mechanism import Redistribution, ratio_stats
from .priors import Prior, sample_profiles

DEFAULT_TOLERANCE = 1e-3  # relative to n - 1
DEFAULT_BINS = 500
_CHUNK = 8192

# test-set sizes used for worst-case auditing, indexed by n
TEST_SIZES = {4: 10_000, 5: 20_000, 6: 20_000, 7: 20_000, 8: 50_000, 9: 50_000, 10: 100_000}

# published worst-case ratios: SBR, ABR, AMD, AO, GAN+MLP, conjectured UB
WORST_CASE_BASELINES = {
    4: (0.354, 0.459, 0.600, 0.625, 0.634, 0.666),
    5: (0.360, 0.402, 0.545, 0.600, 0.622, 0.714),
    6: (0.394, 0.386, 0.497, 0.583, 0.592, 0.868),
    7: (None, 0.360, 0.465, 0.571, 0.626, 0.748),
    8: (None, 0.352, 0.444, 0.563, 0.654, 0.755),
    9: (None, 0.339, 0.422, 0.556, 0.682, 0.772),
    10: (None, 0.336, 0.405, 0.550, 0.623, 0.882),
}
WORST_CASE_COLUMNS = ("SBR", "ABR", "AMD", "AO", "GAN+MLP", "UB")

# published E[sum_i h / S] of MLP+FEED: Uniform(0,1), Normal(0.5,0.1)
EXPECTATION_BASELINES = {
    3: (2.079, 2.101),
    4: (3.071, 3.111),
    5: (4.061, 4.142),
    6: (5.027, 5.034),
    7: (6.009, 6.067),
    8: (7.008, 7.023),
    9: (8.002, 8.008),
    10: (9.003, 9.023),
}


def default_test_size(n: int) -> int:
    if n in TEST_SIZES:
        return TEST_SIZES[n]
    return TEST_SIZES[4] if n < 4 else TEST_SIZES[10]


def build_test_set(
    n: int,
    prior: Prior,
    generator,
    size: int | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Half generator output, half prior samples; all prior without a generator.

    ``generator`` may be a single :class:`Generator` or a pool of them.
    """
    size = default_test_size(n) if size is None else int(size)
    if size < 2:
        raise ValueError("test set needs at least 2 profiles")
    if generator is None:
        return sample_profiles(prior, n, size, rng)
    if any(g.n != n for g in as_pool(generator)):
        raise ValueError(f"generator does not produce n={n} profiles")
    half = size // 2
    adv = np.concatenate([generate_batch(generator, min(_CHUNK, half - k), rng) for k in range(0, half, _CHUNK)])
    return np.concatenate([adv, sample_profiles(prior, n, size - half, rng)])


@dataclass
class EvalReport:
    n: int
    test_size: int
    alpha_estimate: float
    expectation_estimate: float
    min_ratio_stat: float
    max_ratio_stat: float
    violation_count: int
    tolerance: float
    max_violation: float
    feasible: bool
    grid_step: float | None = None
    grid_alpha: float | None = None
    grid_min_ratio_stat: float | None = None
    hist_edges: list = field(repr=False, default_factory=list)
    hist_counts: list = field(repr=False, default_factory=list)
    baseline_rows: list = field(default_factory=list)

    def summary(self) -> str:
        flag = "" if self.feasible else " INFEASIBLE"
        return (
            f"alpha={self.alpha_estimate:.4f} violations={self.violation_count} "
            f"E={self.expectation_estimate:.4f}{flag}"
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio_chunks(h: Redistribution, profiles: np.ndarray, workers: int) -> np.ndarray:
    chunks = [profiles[k : k + _CHUNK] for k in range(0, len(profiles), _CHUNK)]
    if workers <= 1 or len(chunks) == 1:
        parts = [ratio_stats(h, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: ratio_stats(h, c), chunks))
    return np.concatenate(parts)


def evaluate(
    h: Redistribution,
    test_set,
    n: int,
    tolerance: float = DEFAULT_TOLERANCE,
    bins: int = DEFAULT_BINS,
    workers: int = 1,
) -> EvalReport:
    """Summarise sum_i h / S over a test set.

    A profile violates budget balance when ratio - (n - 1) < -tolerance*(n - 1).
    alpha is n minus the largest ratio and is only meaningful when feasible.
    """
    profiles = np.atleast_2d(np.asarray(test_set, dtype=np.float64))
    if profiles.shape[0] == 0:
        raise ValueError("empty test set")
    if profiles.shape[1] != n:
        raise ValueError(f"test set has n={profiles.shape[1]}, expected {n}")
    ratio = _ratio_chunks(h, profiles, workers)
    gap = ratio - (n - 1)
    violations = int(np.count_nonzero(gap < -tolerance * (n - 1)))
    lo, hi = float(ratio.min()), float(ratio.max())
    rng_lo, rng_hi = (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)
    counts, edges = np.histogram(ratio, bins=bins, range=(rng_lo, rng_hi))
    return EvalReport(
        n=n,
        test_size=int(profiles.shape[0]),
        alpha_estimate=n - hi,
        expectation_estimate=math.fsum(ratio.tolist()) / ratio.size,
        min_ratio_stat=lo,
        max_ratio_stat=hi,
        violation_count=violations,
        tolerance=tolerance,
        max_violation=float(max(0.0, -gap.min())),
        feasible=violations == 0,
        hist_edges=edges.tolist(),
        hist_counts=counts.tolist(),
    )


def grid_profiles(n: int, step: float = 0.1) -> np.ndarray:
    """Every nonincreasing profile on the lattice {0, step, ..., 1}^n.

    Sorted profiles suffice because every mechanism here is anonymous.
    """
    k = round(1.0 / step)
    if not math.isclose(k * step, 1.0):
        raise ValueError("grid step must divide 1")
    levels = np.arange(k, -1, -1) / k
    return np.array(list(itertools.combinations_with_replacement(levels, n)))


def grid_audit(h: Redistribution, n: int, step: float = 0.1, workers: int = 1) -> tuple[float, float]:
    """(alpha, min ratio) of ``h`` over the lattice profiles."""
    ratio = _ratio_chunks(h, grid_profiles(n, step), workers)
    return float(n - ratio.max()), float(ratio.min())


def attach_grid_audit(report: EvalReport, h: Redistribution, step: float = 0.1, workers: int = 1) -> EvalReport:
    report.grid_step = step
    report.grid_alpha, report.grid_min_ratio_stat = grid_audit(h, report.n, step, workers)
    return report


def compare_with_baselines(report: EvalReport | None, n: int, objective: str = "worstcase") -> list[dict]:
    """Rows pairing published numbers with our estimate (empty when n is not tabulated)."""
    rows = []
    if objective == "worstcase":
        if n not in WORST_CASE_BASELINES:
            return rows
        for name, value in zip(WORST_CASE_COLUMNS, WORST_CASE_BASELINES[n]):
            rows.append({"mechanism": name, "alpha": value, "source": "published"})
        if report is not None:
            rows.append({"mechanism": "this run", "alpha": round(report.alpha_estimate, 6),
                         "source": "feasible" if report.feasible else "INFEASIBLE"})
    else:
        if n not in EXPECTATION_BASELINES:
            return rows
        uni, nor = EXPECTATION_BASELINES[n]
        rows.append({"mechanism": "MLP+FEED uniform", "expectation": uni, "source": "published"})
        rows.append({"mechanism": "MLP+FEED normal(0.5,0.1)", "expectation": nor, "source": "published"})
        rows.append({"mechanism": "optimum n-1", "expectation": float(n - 1), "source": "bound"})
        if report is not None:
            rows.append({"mechanism": "this run", "expectation": round(report.expectation_estimate, 6),
                         "source": "feasible" if report.feasible else "INFEASIBLE"})
    return rows


def format_table(rows: list[dict], n: int) -> str:
    if not rows:
        return f"n={n}: no published row for this n\n"
    value_key = "alpha" if "alpha" in rows[0] else "expectation"
    lines = [f"n={n}", f"{'mechanism':<28}{value_key:>12}  source"]
    for r in rows:
        v = r[value_key]
        shown = "n too large" if v is None else f"{v:.3f}"
        lines.append(f"{r['mechanism']:<28}{shown:>12}  {r['source']}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, stem: str = "report", objective: str = "worstcase") -> dict:
    """Write JSON, one-row CSV, histogram CSV and comparison table files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.baseline_rows = compare_with_baselines(report, report.n, objective)
    paths = {
        "json": out / f"{stem}.json",
        "csv": out / f"{stem}.csv",
        "histogram": out / f"{stem}_histogram.csv",
        "comparison": out / f"{stem}_comparison.txt",
        "comparison_csv": out / f"{stem}_comparison.csv",
    }
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    scalar = {k: v for k, v in report.to_dict().items() if not isinstance(v, list)}
    with paths["csv"].open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(scalar))
        writer.writeheader()
        writer.writerow(scalar)
    with paths["histogram"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        edges = report.hist_edges
        for left, right, c in zip(edges[:-1], edges[1:], report.hist_counts):
            writer.writerow([repr(left), repr(right), c])
    paths["comparison"].write_text(format_table(report.baseline_rows, report.n))
    with paths["comparison_csv"].open("w", newline="") as fh:
        if report.baseline_rows:
            writer = csv.DictWriter(fh, fieldnames=list(report.baseline_rows[0]))
            writer.writeheader()
            writer.writerows(report.baseline_rows)
    return paths
