"""Reductions: balanced identity to uniformity, and extreme products <-> univariate.

Extreme product distributions are handled over {0,1}^d (binary matrices);
``core.to_binary`` / ``core.from_binary`` convert from and to PM1 data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Tuple, Union

import numpy as np

from dpht.core import (C1, Dataset, Decision, Kind, ProductSpec, RngHandle, TestOutcome,
                       FormatError, parse_header, balance_constant, to_binary)
from dpht.filter_tester import uniformity_test_filter
from dpht.gaussian_tester import Backend
from dpht.lipschitz_tester import ExtensionMode, uniformity_test_lipschitz
from dpht.mechanisms import laplace_draw

LINF_BUDGET = 200.0   # linf_gate needs n >= LINF_BUDGET * ln(d) / eps
L1_BUDGET = 400.0     # l1_gate needs n >= L1_BUDGET / eps
GATE_THRESHOLD = 3.0 / 8.0
L1_ROW_FACTOR = 8     # l1_gate counts rows with at least 8 tau ones
BASELINE_C = 10.0     # baseline tester operating point n = BASELINE_C sqrt(k) / alpha^2


class Refusal(Exception):
    """An explicit refusal, distinct from both Accept and Reject."""


class GateRefusal(Refusal):
    pass


class ReductionRefused(Refusal):
    pass


@dataclass(frozen=True, eq=False)
class UnivariateSamples:
    k: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64).reshape(-1)
        if self.k < 1:
            raise ValueError("domain size k must be >= 1")
        if v.size and (v.min() < 1 or v.max() > self.k):
            raise ValueError(f"univariate values must lie in [1, {self.k}]")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def counts(self) -> np.ndarray:
        """Frequency of each symbol 1..k."""
        return np.bincount(self.values, minlength=self.k + 1)[1:]

    def __eq__(self, other) -> bool:
        if not isinstance(other, UnivariateSamples):
            return NotImplemented
        return self.k == other.k and bool(np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class ExtremeSpec:
    """Product distribution over {0,1}^d with every mean within C/d of 0 or 1."""

    q: np.ndarray
    C: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if q.size < 1 or np.any((q < 0) | (q > 1)):
            raise ValueError("extreme means must lie in [0, 1]")
        if not self.C > 0:
            raise ValueError("C must be positive")
        object.__setattr__(self, "q", q)
        lim = self.C / q.size
        if np.any((q > lim + 1e-12) & (q < 1 - lim - 1e-12)):
            raise ValueError("spec is not extreme: some mean is farther than C/d from 0 and 1")
        if self.oriented().sum() > self.C + 1e-9:
            raise ValueError("oriented means sum above C")

    @property
    def d(self) -> int:
        return self.q.size

    def flips(self) -> np.ndarray:
        return self.q > 0.5

    def oriented(self) -> np.ndarray:
        return np.where(self.flips(), 1.0 - self.q, self.q)


def _as_binary(X) -> np.ndarray:
    if isinstance(X, Dataset):
        return to_binary(X)
    B = np.asarray(X)
    if B.ndim != 2 or not np.all((B == 0) | (B == 1)):
        raise ValueError("expected a 2-D matrix of 0/1 entries")
    return B.astype(np.int8, copy=False)


# -------------------------------------------------------- balanced reduction

def balanced_reduce(X: Dataset, q: ProductSpec, rng: RngHandle) -> Dataset:
    """Mix each entry with a draw that cancels q, halving the mean gap."""
    if X.kind is not Kind.PM1:
        raise TypeError("balanced_reduce needs a PM1 dataset")
    if X.d != q.d:
        raise ValueError(f"dimension mismatch: data d={X.d}, spec d={q.d}")
    keep = rng.gen.random(X.entries.shape) < 0.5
    plus = rng.gen.random(X.entries.shape) < (1.0 - q.means) / 2.0
    y = np.where(keep, X.entries, np.where(plus, 1, -1)).astype(np.int8)
    return Dataset(Kind.PM1, y)


def balanced_constant(tau: float) -> float:
    """Distance factor c(tau) handed to the uniformity tester."""
    return C1 / (2.0 * balance_constant(tau))


def identity_test_balanced(X: Dataset, Q: ProductSpec, tau: float, epsilon: float,
                           delta: float, alpha: float, backend: Backend, rng: RngHandle,
                           noiseless: bool = False,
                           mode: ExtensionMode = ExtensionMode.SHORTCUT) -> TestOutcome:
    if not (0 < tau <= 1):
        raise ValueError("tau must lie in (0, 1]")
    if np.any(np.abs(Q.means) > 1.0 - tau + 1e-12):
        raise ValueError("reference distribution is not tau-balanced")
    Y = balanced_reduce(X, Q, rng.child(0))
    alpha_b = balanced_constant(tau) * alpha
    inner_rng = rng.child(1)
    if Backend(backend) is Backend.FILTER:
        inner, _ = uniformity_test_filter(Y, epsilon, delta, alpha_b, inner_rng, noiseless)
    else:
        inner = uniformity_test_lipschitz(Y, epsilon, alpha_b, mode, inner_rng, noiseless)
    trace = {**inner.trace, "tester": "balanced", "backend": Backend(backend).value,
             "tau": tau, "alpha": alpha, "backend_alpha": alpha_b}
    return TestOutcome(inner.decision, trace)


# ------------------------------------------------- extreme <-> univariate

def extreme_to_univariate(X) -> UnivariateSamples:
    """Zero row -> d+1, single one at j -> j, two or more ones -> d+2."""
    B = _as_binary(X)
    d = B.shape[1]
    ones = B.sum(axis=1)
    pos = np.argmax(B, axis=1) + 1
    vals = np.where(ones == 0, d + 1, np.where(ones == 1, pos, d + 2))
    return UnivariateSamples(d + 2, vals)


def univariate_mass(q) -> np.ndarray:
    """Law of ``extreme_to_univariate`` under the product with means q, length d+2."""
    q = np.asarray(q, dtype=float).reshape(-1)
    one_minus = 1.0 - q
    prefix = np.concatenate([[1.0], np.cumprod(one_minus)[:-1]])
    suffix = np.concatenate([np.cumprod(one_minus[::-1])[::-1][1:], [1.0]])
    single = q * prefix * suffix
    p0 = float(np.prod(one_minus))
    rest = max(0.0, 1.0 - single.sum() - p0)
    return np.concatenate([single, [p0, rest]])


def gamma(C: float) -> float:
    """Distance shrink factor e^-C / (8 (1 + 16 max(1, C)))."""
    return math.exp(-C) / (8.0 * (1.0 + 16.0 * max(1.0, C)))


def linf_budget(d: int, epsilon: float) -> float:
    return LINF_BUDGET * math.log(d) / epsilon


def l1_budget(epsilon: float) -> float:
    return L1_BUDGET / epsilon


def linf_gate(X, epsilon: float, rng: RngHandle, noiseless: bool = False) -> bool:
    """Pass (True) iff max_i mean_i + Lap(1/(n eps)) <= 3/8.

    The maximum of the coordinate means moves by at most 1/n between
    neighbouring datasets, so one Laplace draw on it is eps-DP.
    """
    B = _as_binary(X)
    n, d = B.shape
    if n < max(1.0, linf_budget(d, epsilon)):
        raise GateRefusal(f"linf_gate needs n >= {linf_budget(d, epsilon):.1f}, got {n}")
    v = float(B.mean(axis=0).max()) + laplace_draw(1.0 / (n * epsilon), rng, noiseless)
    return v <= GATE_THRESHOLD


def l1_gate(X, tau: float, epsilon: float, rng: RngHandle, noiseless: bool = False) -> bool:
    """Pass (True) iff the noisy fraction of rows with >= 8 tau ones is <= 3/8."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    B = _as_binary(X)
    n = B.shape[0]
    if n < l1_budget(epsilon):
        raise GateRefusal(f"l1_gate needs n >= {l1_budget(epsilon):.1f}, got {n}")
    f = float(np.mean(B.sum(axis=1) >= L1_ROW_FACTOR * tau))
    return f + laplace_draw(1.0 / (n * epsilon), rng, noiseless) <= GATE_THRESHOLD


UnivariateTester = Callable[..., TestOutcome]


def baseline_univariate_tester(samples: UnivariateSamples, Q, alpha: float,
                               epsilon: float | None = None,
                               rng: RngHandle | None = None) -> TestOutcome:
    """Non-private chi-square identity test.

    U is an unbiased estimate of sum_i (p_i - q_i)^2 / q_i over the
    support of Q, which is at least alpha^2 when ||P - Q||_1 >= alpha.
    Reject iff U > alpha^2 / 2, or any symbol outside the support appears.
    """
    q = np.asarray(Q, dtype=float).reshape(-1)
    if q.size != samples.k:
        raise ValueError(f"reference has k={q.size} but samples have k={samples.k}")
    if np.any(q < 0) or not math.isclose(q.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("reference must be a probability vector")
    n = samples.n
    trace = {"tester": "baseline-univariate", "private": False, "alpha": alpha, "n": n}
    counts = samples.counts().astype(float)
    supp = q > 0
    if np.any(counts[~supp] > 0):
        return TestOutcome(Decision.REJECT, {**trace, "stage": "support"})
    if n < 2:
        return TestOutcome(Decision.ACCEPT, {**trace, "stage": "none", "statistic": 0.0})
    c, qs = counts[supp], q[supp]
    u = float(np.sum((c * (c - 1) / (n * (n - 1)) - 2 * qs * c / n + qs * qs) / qs))
    thr = alpha * alpha / 2.0
    rej = u > thr
    return TestOutcome(Decision.REJECT if rej else Decision.ACCEPT,
                       {**trace, "stage": "chi2" if rej else "none",
                        "statistic": u, "threshold": thr})


def identity_test_extreme(X, Q: ExtremeSpec, epsilon: float, alpha: float,
                          univariate_tester: UnivariateTester, rng: RngHandle,
                          noiseless: bool = False) -> TestOutcome:
    """Two private gates at eps/3 each, then the univariate tester at eps/3."""
    B = _as_binary(X)
    if B.shape[1] != Q.d:
        raise ValueError(f"dimension mismatch: data d={B.shape[1]}, spec d={Q.d}")
    flips = Q.flips()
    B = np.where(flips, 1 - B, B).astype(np.int8)
    q = Q.oriented()
    e3 = epsilon / 3.0
    trace = {"tester": "extreme", "epsilon": epsilon, "alpha": alpha, "C": Q.C,
             "flipped": [int(i) for i in np.flatnonzero(flips)], "noiseless_debug": noiseless}
    if not linf_gate(B, e3, rng.child(0), noiseless):
        return TestOutcome(Decision.REJECT, {**trace, "stage": "linf_gate", "private": not noiseless})
    if not l1_gate(B, max(1.0, Q.C), e3, rng.child(1), noiseless):
        return TestOutcome(Decision.REJECT, {**trace, "stage": "l1_gate", "private": not noiseless})
    g = gamma(Q.C)
    inner = univariate_tester(extreme_to_univariate(B), univariate_mass(q), g * alpha,
                              e3, rng.child(2))
    private = bool(inner.trace.get("private", True)) and not noiseless
    return TestOutcome(inner.decision, {**trace, "gamma": g, "univariate_alpha": g * alpha,
                                        "stage": "univariate:" + str(inner.trace.get("stage")),
                                        "private": private})


def poissonize(samples: UnivariateSamples, n: int, rng: RngHandle) -> UnivariateSamples:
    """Keep Poisson(n) of the first 2n samples; refuse if that count exceeds 2n."""
    if samples.n < 2 * n:
        raise ValueError(f"poissonize needs at least 2n = {2 * n} samples, got {samples.n}")
    N = int(rng.gen.poisson(n))
    if N > 2 * n:
        raise ReductionRefused(f"Poisson count {N} exceeds 2n = {2 * n}")
    idx = rng.gen.choice(2 * n, size=N, replace=False)
    return UnivariateSamples(samples.k, samples.values[:2 * n][idx])


def min_n_univariate_to_extreme(d: int) -> int:
    """n at which the refusal probability of ``univariate_to_extreme`` is <= 1/10.

    By a Chernoff bound P(Poisson(2n) < n) <= exp(-0.3 n); a union bound
    over d coordinates gives the 1/10 level once n >= 4 ln(10 d).
    """
    return math.ceil(4.0 * math.log(10.0 * d))


def univariate_columns(samples: UnivariateSamples, n: int, rng: RngHandle
                       ) -> Tuple[List[np.ndarray], int]:
    """Per-coordinate 0/1 columns of length N_i + M_i with N_i ones, and M = min length."""
    d = samples.k
    N = samples.counts()
    Mi = rng.gen.poisson(2 * n, size=d)
    cols = []
    for i in range(d):
        total = int(N[i] + Mi[i])
        col = np.zeros(total, dtype=np.int8)
        col[rng.gen.permutation(total)[:N[i]]] = 1
        cols.append(col)
    return cols, int(min(c.size for c in cols))


def univariate_to_extreme(samples: UnivariateSamples, n: int, rng: RngHandle) -> np.ndarray:
    """Binary rows whose coordinates are independent with means p_i / (1 + p_i).

    ``samples`` are the symbols seen after Poissonizing with parameter 2n.
    Returns all M rows; callers keep the first n. Raises ReductionRefused
    when M < n.
    """
    cols, M = univariate_columns(samples, n, rng)
    if M < n:
        raise ReductionRefused(f"only {M} rows available, need {n}")
    return np.stack([c[:M] for c in cols], axis=1)


# --------------------------------------------------------- univariate I/O

UNIV_MAGIC = "dpht-univ"


def format_univariate(s: UnivariateSamples) -> str:
    lines = [f"{UNIV_MAGIC} v1 k={s.k} n={s.n}"] + [str(int(v)) for v in s.values]
    return "\n".join(lines) + "\n"


def parse_univariate(text: str) -> UnivariateSamples:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty univariate file")
    h = parse_header(lines[0], UNIV_MAGIC, ("k", "n"))
    try:
        k, n = int(h["k"]), int(h["n"])
        vals = [int(v) for v in lines[1:]]
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if len(vals) != n:
        raise FormatError(f"header says n={n} but found {len(vals)} values")
    try:
        return UnivariateSamples(k, np.array(vals, dtype=np.int64))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_univariate(s: UnivariateSamples, path: Union[str, Path]) -> None:
    Path(path).write_text(format_univariate(s), encoding="utf-8")


def read_univariate(path: Union[str, Path]) -> UnivariateSamples:
    return parse_univariate(Path(path).read_text(encoding="utf-8"))
