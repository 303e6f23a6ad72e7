"""Efficient private uniformity tester: screen, filter, then threshold.

Noise is drawn in a fixed order: r1, the Gaussian vector R, r2, the
replacement rows (in row order), then r3. A run stops drawing as soon as a
stage rejects.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from dpht.core import Dataset, Decision, Kind, RngHandle, TestOutcome
from dpht.mechanisms import gaussian_vector_draw, laplace_array, laplace_draw
from dpht.statistic import colsum, statistic_T, uniformity_threshold

# Claimed guarantee is (EPS_FACTOR * eps, DELTA_FACTOR * delta).
EPS_FACTOR = 4
DELTA_FACTOR = 13


class FilterStage(enum.Enum):
    NONE = "none"
    STAGE1_MAX = "stage1max"
    STAGE1_COUNT = "stage1count"
    FINAL = "final"


@dataclass
class FilterTrace:
    stage_rejected: FilterStage = FilterStage.NONE
    z1: Optional[float] = None
    z2: Optional[float] = None
    z3: Optional[float] = None
    replaced_rows: List[int] = field(default_factory=list)
    deff: float = 0.0
    noiseless_debug: bool = False


def deff(n: int, d: int, epsilon: float, delta: float) -> float:
    l_d = math.log(d / delta)
    l_1 = math.log(1.0 / delta)
    l_n = math.log(n / delta)
    return 16.0 * (d * l_d
                   + d / (n * epsilon**2) * l_1**2
                   + math.sqrt(n * d) * math.sqrt(l_d * l_n)
                   + math.sqrt(d) / epsilon * l_1 * math.sqrt(l_n))


@dataclass(frozen=True)
class FilterConstants:
    max_threshold: float     # stage 1a
    sigma: float             # stage 1b Gaussian noise
    row_threshold: float     # shared by stage 1b and stage 2
    count_threshold: float   # stage 1b
    final_scale: float       # stage 3 Laplace scale
    final_threshold: float   # stage 3
    deff: float


def filter_constants(n: int, d: int, epsilon: float, delta: float, alpha: float) -> FilterConstants:
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if not (0 < alpha <= 2):
        raise ValueError("alpha must lie in (0, 2]")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    l_1 = math.log(1.0 / delta)
    l_5 = math.log(5.0 / (4.0 * delta))
    l_n = math.log(n / delta)
    de = deff(n, d, epsilon, delta)
    return FilterConstants(
        max_threshold=math.sqrt(2.0 * n * math.log(d / delta)) + 2.0 / epsilon * l_1,
        sigma=math.sqrt(8.0 * d * l_5) / epsilon,
        row_threshold=de + 4.0 * d / epsilon * math.sqrt(l_5 * l_n),
        count_threshold=l_1 / epsilon,
        final_scale=(4.0 * de + 48.0 * d / epsilon * math.sqrt(l_5 * l_n)) / epsilon,
        final_threshold=uniformity_threshold(n, alpha),
        deff=de,
    )


def violating_rows(x: np.ndarray, xtilde: np.ndarray, row_threshold: float) -> np.ndarray:
    """Mask of rows with |<x_j, xtilde>| above the threshold.

    Stage 1b counts these rows and stage 2 replaces them; both go through
    this function so the two stages can never disagree.
    """
    return np.abs(x @ xtilde) > row_threshold


def uniformity_test_filter(X: Dataset, epsilon: float, delta: float, alpha: float,
                           rng: RngHandle, noiseless: bool = False
                           ) -> Tuple[TestOutcome, FilterTrace]:
    if X.kind is not Kind.PM1:
        raise TypeError("filter tester needs a PM1 dataset")
    n, d = X.n, X.d
    c = filter_constants(n, d, epsilon, delta, alpha)
    tr = FilterTrace(deff=c.deff, noiseless_debug=noiseless)
    info = {"tester": "filter", "epsilon": epsilon, "delta": delta, "alpha": alpha,
            "claimed_epsilon": EPS_FACTOR * epsilon, "claimed_delta": DELTA_FACTOR * delta,
            "max_threshold": c.max_threshold, "row_threshold": c.row_threshold,
            "count_threshold": c.count_threshold, "final_threshold": c.final_threshold,
            "final_scale": c.final_scale, "noiseless_debug": noiseless, "private": not noiseless}

    def done(stage: FilterStage) -> Tuple[TestOutcome, FilterTrace]:
        tr.stage_rejected = stage
        rejected = stage is not FilterStage.NONE
        trace = {**info, "stage": stage.value, "z1": tr.z1, "z2": tr.z2, "z3": tr.z3,
                 "deff": tr.deff, "replaced_rows": list(tr.replaced_rows)}
        return TestOutcome(Decision.REJECT if rejected else Decision.ACCEPT, trace), tr

    s = colsum(X)
    tr.z1 = float(np.max(np.abs(s))) + laplace_draw(2.0 / epsilon, rng, noiseless)
    if tr.z1 > c.max_threshold:
        return done(FilterStage.STAGE1_MAX)

    xt = s + gaussian_vector_draw(c.sigma, d, rng, noiseless)
    x = X.entries.astype(np.float64)
    bad = violating_rows(x, xt, c.row_threshold)
    tr.z2 = float(bad.sum()) + laplace_draw(1.0 / epsilon, rng, noiseless)
    if tr.z2 > c.count_threshold:
        return done(FilterStage.STAGE1_COUNT)

    xhat = X.entries.copy()
    idx = np.flatnonzero(bad)
    if idx.size:
        u = rng.gen.random((idx.size, d))
        xhat[idx] = np.where(u < 0.5, 1, -1)
    tr.replaced_rows = [int(i) for i in idx]

    t = statistic_T(Dataset(Kind.PM1, xhat)).value
    tr.z3 = t + laplace_draw(c.final_scale, rng, noiseless)
    return done(FilterStage.FINAL if tr.z3 > c.final_threshold else FilterStage.NONE)


def filter_reject_count(X: Dataset, epsilon: float, delta: float, alpha: float,
                        trials: int, rng: RngHandle, chunk_cells: int = 4_000_000) -> int:
    """Number of rejections over ``trials`` independent runs, vectorised.

    Same distribution as repeated calls to ``uniformity_test_filter``; the
    draw order inside a chunk differs, so individual runs do not match.
    """
    n, d = X.n, X.d
    c = filter_constants(n, d, epsilon, delta, alpha)
    x = X.entries.astype(np.float64)
    s = colsum(X).astype(np.float64)
    s_max = float(np.max(np.abs(s)))
    chunk = max(1, chunk_cells // (n * d))
    total = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        done += m
        rej = s_max + laplace_array(2.0 / epsilon, m, rng) > c.max_threshold
        xt = s[None, :] + c.sigma * rng.gen.standard_normal((m, d))
        bad = violating_rows(x, xt.T, c.row_threshold).T    # (m, n)
        rej |= bad.sum(axis=1) + laplace_array(1.0 / epsilon, m, rng) > c.count_threshold
        u = np.where(rng.gen.random((m, n, d)) < 0.5, 1.0, -1.0)
        xhat = np.where(bad[:, :, None], u, x[None, :, :])
        cs = xhat.sum(axis=1)
        t = (cs * cs).sum(axis=1) - n * d
        rej |= t + laplace_array(c.final_scale, m, rng) > c.final_threshold
        total += int(rej.sum())
    return total
