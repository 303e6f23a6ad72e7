"""The collision-style statistic T, the sensitivity set C(Delta), and moments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from dpht.core import Dataset, Decision, GaussianSpec, Kind, ProductSpec, TestOutcome


@dataclass(frozen=True)
class StatValue:
    value: int
    colsum: np.ndarray


def _require_pm1(X: Dataset) -> None:
    if X.kind is not Kind.PM1:
        raise TypeError("statistic needs a PM1 dataset")


def colsum(X: Dataset) -> np.ndarray:
    return X.entries.sum(axis=0, dtype=np.int64)


def statistic_T(X: Dataset) -> StatValue:
    """T(X) = sum_i (Xbar_i^2 - n) = ||Xbar||^2 - n d, in exact integers."""
    _require_pm1(X)
    s = colsum(X)
    value = sum(int(v) * int(v) for v in s) - X.n * X.d
    return StatValue(value, s)


def row_inner_products(X: Dataset, s: np.ndarray | None = None) -> np.ndarray:
    """<X^(j), Xbar> for every row j."""
    if s is None:
        s = colsum(X)
    return X.entries.astype(np.int64) @ np.asarray(s, dtype=np.int64)


def in_set_C(X: Dataset, delta: float) -> Tuple[bool, int]:
    """Membership in C(Delta) plus max_j |<X^(j), Xbar>|."""
    _require_pm1(X)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    m = int(np.max(np.abs(row_inner_products(X))))
    return m <= delta, m


def moments_product(p: ProductSpec, n: int) -> Tuple[float, float]:
    """Exact mean and variance of T under n samples of the product distribution."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p2 = p.means**2
    mean = n * (n - 1) * float(p2.sum())
    var = 2.0 * n * (n - 1) * float(np.sum(1.0 + (2 * n - 4) * p2 - (2 * n - 3) * p2**2))
    return mean, var


def moments_gaussian(mu: GaussianSpec, n: int) -> Tuple[float, float]:
    """Mean and variance of sum_i (Xbar_i^2 - n) under N(mu, I)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m2 = float(mu.mean @ mu.mean)
    return n * n * m2, 2.0 * n * n * mu.d + 4.0 * n**3 * m2


def uniformity_threshold(n: int, alpha: float) -> float:
    return 0.25 * n * (n - 1) * alpha * alpha


def nonprivate_uniformity_test(X: Dataset, alpha: float) -> TestOutcome:
    if not (0 < alpha <= 2):
        raise ValueError("alpha must lie in (0, 2]")
    t = statistic_T(X).value
    thr = uniformity_threshold(X.n, alpha)
    decision = Decision.REJECT if t > thr else Decision.ACCEPT
    return TestOutcome(decision, {"tester": "nonprivate", "private": False,
                                  "statistic": t, "threshold": thr})
