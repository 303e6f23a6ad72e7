"""Gaussian mean testing against N(0, I): via the sign map, and directly."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import erf

from dpht.core import C1, Dataset, Decision, Kind, RngHandle, TestOutcome
from dpht.filter_tester import uniformity_test_filter, violating_rows
from dpht.lipschitz_tester import ExtensionMode, uniformity_test_lipschitz
from dpht.mechanisms import gaussian_vector_draw, laplace_draw

EPS_FACTOR = 5
DELTA_FACTOR = 17
ERF_CONST = 0.84

# The sign image of N(mu, I) has mean l2 norm above alpha/12 when mu is
# alpha-far; C1 turns that l2 budget into the Boolean tester's distance.
REDUCTION_CONSTANT = C1 / 12.0


def sign_reduce(X: Dataset) -> Dataset:
    """Entrywise sign with sgn(0) = +1."""
    if X.kind is not Kind.REAL:
        raise TypeError("sign_reduce needs a Real dataset")
    return Dataset(Kind.PM1, np.where(X.entries >= 0, 1, -1).astype(np.int8))


def erf_min_bound(t: float) -> bool:
    """Whether |erf(-t)| >= 0.84 min(|t|, 1) holds at t."""
    return abs(math.erf(-t)) >= ERF_CONST * min(abs(t), 1.0)


def sign_mean(mu) -> np.ndarray:
    """E[sgn(X_i)] for X_i ~ N(mu_i, 1)."""
    mu = np.asarray(mu, dtype=float)
    return -erf(-mu / math.sqrt(2.0))


class Backend(enum.Enum):
    LIPSCHITZ = "lipschitz"
    FILTER = "filter"


def gaussian_test_via_reduction(X: Dataset, epsilon: float, delta: float, alpha: float,
                                tester: Backend, rng: RngHandle, noiseless: bool = False,
                                mode: ExtensionMode = ExtensionMode.SHORTCUT) -> TestOutcome:
    tester = Backend(tester)
    Y = sign_reduce(X)
    alpha_b = REDUCTION_CONSTANT * alpha
    if tester is Backend.FILTER:
        inner, _ = uniformity_test_filter(Y, epsilon, delta, alpha_b, rng, noiseless)
    else:
        inner = uniformity_test_lipschitz(Y, epsilon, alpha_b, mode, rng, noiseless)
    trace = {**inner.trace, "tester": "gauss-reduce", "backend": tester.value,
             "alpha": alpha, "backend_alpha": alpha_b,
             "reduction_constant": REDUCTION_CONSTANT}
    return TestOutcome(inner.decision, trace)


class GaussStage(enum.Enum):
    NONE = "none"
    SAMPLE_SIZE = "samplesize"
    SIGN_COUNT = "signcount"
    TRUNC_MAX = "truncmax"
    INNER_COUNT = "innercount"
    FINAL = "final"


@dataclass
class GaussTrace:
    stage_rejected: GaussStage = GaussStage.NONE
    z1: Optional[float] = None
    z2: Optional[float] = None
    z3: Optional[float] = None
    z4: Optional[float] = None
    B: Optional[float] = None
    deff_g: Optional[float] = None
    replaced_rows: List[int] = field(default_factory=list)
    noiseless_debug: bool = False


def min_samples_direct(d: int, epsilon: float, delta: float) -> float:
    return max(25.0 * math.log(d / delta), 5.0 / epsilon * math.log(1.0 / delta))


@dataclass(frozen=True)
class GaussConstants:
    B: float
    sign_threshold: float
    max_threshold: float
    sigma: float
    deff_g: float
    row_threshold: float
    count_threshold: float
    final_scale: float
    final_threshold: float


def gaussian_constants(n: int, d: int, epsilon: float, delta: float, alpha: float) -> GaussConstants:
    if not (0 < delta < 1 and epsilon > 0 and alpha > 0):
        raise ValueError("need epsilon > 0, delta in (0, 1), alpha > 0")
    l_1 = math.log(1.0 / delta)
    l_d = math.log(d / delta)
    l_n = math.log(n / delta)
    l_nd = math.log(n * d / delta)
    l_5 = math.log(5.0 / (4.0 * delta))
    B = 3.0 * math.sqrt(l_nd)
    dg = 144.0 * (d * l_d + d / (n * epsilon**2) * l_1**2
                  + math.sqrt(n * d) * math.sqrt(l_d * l_n)
                  + math.sqrt(d) / epsilon * l_1 * math.sqrt(l_n)) * l_nd
    extra = d / epsilon * l_nd * math.sqrt(l_n * l_5)
    return GaussConstants(
        B=B,
        sign_threshold=math.sqrt(l_d) / math.sqrt(n) + l_1 / (epsilon * n),
        max_threshold=3.0 * math.sqrt(2.0 * n * l_nd * l_d) + 6.0 / epsilon * math.sqrt(l_nd) * l_1,
        sigma=B * math.sqrt(8.0 * d * l_5) / epsilon,
        deff_g=dg,
        row_threshold=dg + 36.0 * extra,
        count_threshold=l_1 / epsilon,
        final_scale=(5.0 * dg + 432.0 * extra) / epsilon,
        final_threshold=n * n * alpha * alpha / 324.0,
    )


def gaussian_test_direct(X: Dataset, epsilon: float, delta: float, alpha: float,
                         rng: RngHandle, noiseless: bool = False
                         ) -> Tuple[TestOutcome, GaussTrace]:
    """Direct tester; noise order is r1, r2, R, r3, replacement rows, r4."""
    if X.kind is not Kind.REAL:
        raise TypeError("direct Gaussian tester needs a Real dataset")
    n, d = X.n, X.d
    tr = GaussTrace(noiseless_debug=noiseless)
    info = {"tester": "gauss-direct", "epsilon": epsilon, "delta": delta, "alpha": alpha,
            "claimed_epsilon": EPS_FACTOR * epsilon, "claimed_delta": DELTA_FACTOR * delta,
            "noiseless_debug": noiseless, "private": not noiseless}

    def done(stage: GaussStage) -> Tuple[TestOutcome, GaussTrace]:
        tr.stage_rejected = stage
        trace = {**info, "stage": stage.value, "z1": tr.z1, "z2": tr.z2, "z3": tr.z3,
                 "z4": tr.z4, "B": tr.B, "deff_g": tr.deff_g,
                 "replaced_rows": list(tr.replaced_rows)}
        dec = Decision.ACCEPT if stage is GaussStage.NONE else Decision.REJECT
        return TestOutcome(dec, trace), tr

    if n < min_samples_direct(d, epsilon, delta):
        return done(GaussStage.SAMPLE_SIZE)
    c = gaussian_constants(n, d, epsilon, delta, alpha)
    tr.B, tr.deff_g = c.B, c.deff_g

    counts = (X.entries <= 0).sum(axis=0)
    m = counts / n - 0.5
    tr.z1 = float(np.max(np.abs(m))) + laplace_draw(1.0 / (epsilon * n), rng, noiseless)
    if tr.z1 > c.sign_threshold:
        return done(GaussStage.SIGN_COUNT)

    x = np.clip(X.entries, -c.B, c.B)
    s = x.sum(axis=0)
    tr.z2 = float(np.max(np.abs(s))) + laplace_draw(2.0 * c.B / epsilon, rng, noiseless)
    if tr.z2 > c.max_threshold:
        return done(GaussStage.TRUNC_MAX)

    xt = s + gaussian_vector_draw(c.sigma, d, rng, noiseless)
    bad = violating_rows(x, xt, c.row_threshold)
    tr.z3 = float(bad.sum()) + laplace_draw(1.0 / epsilon, rng, noiseless)
    if tr.z3 > c.count_threshold:
        return done(GaussStage.INNER_COUNT)

    idx = np.flatnonzero(bad)
    if idx.size:
        x = x.copy()
        x[idx] = rng.gen.standard_normal((idx.size, d))
    tr.replaced_rows = [int(i) for i in idx]

    s = x.sum(axis=0)
    t = float(s @ s) - n * d
    tr.z4 = t + laplace_draw(c.final_scale, rng, noiseless)
    return done(GaussStage.FINAL if tr.z4 > c.final_threshold else GaussStage.NONE)
