"""Lipschitz-extension uniformity tester with a data-independent Delta schedule.

The extension of T from C(Delta) is computed by brute force over the whole
domain {-1,+1}^(n x d), which is only feasible for n*d <= 16. For utility
simulation at realistic sizes the ``SHORTCUT`` mode uses T itself and flags
any run where the input falls outside C(Delta); such runs carry no privacy
guarantee.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from dpht.core import Dataset, Decision, Kind, RngHandle, TestOutcome
from dpht.mechanisms import laplace_array, laplace_draw
from dpht.statistic import in_set_C, statistic_T, uniformity_threshold

MAX_EXACT_CELLS = 16


class ExtensionMode(enum.Enum):
    EXACT = "exact"
    SHORTCUT = "shortcut"


@dataclass(frozen=True)
class DeltaSchedule:
    deltas: Tuple[float, ...]
    delta_star: float
    eps_prime: float
    beta: float
    cap: int

    @property
    def rounds(self) -> int:
        return len(self.deltas)

    @property
    def final_delta(self) -> float:
        return self.deltas[-1]


def delta_star(n: int, d: int, eps_prime: float, beta: float) -> float:
    L = math.log(1.0 / beta)
    return 100.0 * max(d, math.sqrt(n * d), L / eps_prime) * L


def next_delta(delta: float, n: int, d: int, eps_prime: float, beta: float) -> float:
    L = math.log(1.0 / beta)
    return 11.0 * (d + math.sqrt(n * d) + delta / (n * eps_prime)
                   + math.sqrt(delta / eps_prime)) * L


def round_cap(n: int, d: int, epsilon: float, beta: float) -> int:
    """Number of rounds M, fixed before the schedule is built.

    M depends on Delta* and Delta* depends on eps/M, so a provisional
    eps/ceil(log2(nd)) is used to size Delta* first.
    """
    k0 = max(1, math.ceil(math.log2(n * d)))
    ds0 = delta_star(n, d, epsilon / k0, beta)
    return max(1, math.ceil(math.log2(n * d / ds0)) + 2)


def build_delta_schedule(n: int, d: int, epsilon: float, beta: float) -> DeltaSchedule:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if not (epsilon > 0 and 0 < beta < 1):
        raise ValueError("need epsilon > 0 and beta in (0, 1)")
    cap = round_cap(n, d, epsilon, beta)
    eps_p = epsilon / cap
    ds = delta_star(n, d, eps_p, beta)
    deltas = [float(n * d)]
    for _ in range(cap - 1):
        if deltas[-1] <= ds:
            break
        deltas.append(next_delta(deltas[-1], n, d, eps_p, beta))
    return DeltaSchedule(tuple(deltas), ds, eps_p, beta, cap)


def halving_regime(n: int, d: int, epsilon: float) -> bool:
    """Sufficient condition for every schedule step above Delta* to halve.

    Above Delta* the ratio Delta^(m+1)/Delta^(m) is at most
    0.22 + 11L/(n eps') + 11L/sqrt(Delta* eps'); the last two terms are
    each <= 0.11 when n eps' >= 100 L and Delta* eps' >= 1e4 L^2.
    Outside this regime halving can fail.
    """
    beta = 1.0 / (10 * n)
    L = math.log(1.0 / beta)
    s = build_delta_schedule(n, d, epsilon, beta)
    return n * s.eps_prime >= 100 * L and s.delta_star * s.eps_prime >= 1e4 * L * L


# ------------------------------------------------------- brute-force extension

@lru_cache(maxsize=32)
def _domain(n: int, d: int):
    """All datasets in {-1,+1}^(n x d) as row codes, with T and max |<row, Xbar>|."""
    if n * d > MAX_EXACT_CELLS:
        raise ValueError(f"exact extension needs n*d <= {MAX_EXACT_CELLS}, got {n * d}")
    rows = np.array([[1 if (c >> b) & 1 else -1 for b in range(d)] for c in range(1 << d)],
                    dtype=np.int64)
    N = 1 << (n * d)
    k = np.arange(N, dtype=np.int64)
    mask = (1 << d) - 1
    codes = np.stack([(k >> (j * d)) & mask for j in range(n)], axis=1)
    cs = np.zeros((N, d), dtype=np.int64)
    for j in range(n):
        cs += rows[codes[:, j]]
    T = (cs * cs).sum(axis=1) - n * d
    inner = np.stack([(rows[codes[:, j]] * cs).sum(axis=1) for j in range(n)], axis=1)
    max_inner = np.abs(inner).max(axis=1)
    for a in (codes, T, max_inner):
        a.setflags(write=False)
    return codes, T, max_inner


def row_codes(X: Dataset) -> np.ndarray:
    bits = (X.entries > 0).astype(np.int64)
    return bits @ (1 << np.arange(X.d, dtype=np.int64))


def dataset_from_index(k: int, n: int, d: int) -> Dataset:
    mask = (1 << d) - 1
    x = [[1 if ((k >> (j * d)) & mask) >> b & 1 else -1 for b in range(d)] for j in range(n)]
    return Dataset(Kind.PM1, np.array(x))


def dataset_index(X: Dataset) -> int:
    return int(sum(int(c) << (j * X.d) for j, c in enumerate(row_codes(X))))


def mcshane_whitney_extend(X: Dataset, delta: float, L: float | None = None) -> float:
    """min over Y in C(Delta) of T(Y) + L * (number of rows where X and Y differ)."""
    if L is None:
        L = 4.0 * delta
    codes, T, max_inner = _domain(X.n, X.d)
    inset = max_inner <= delta
    if not inset.any():
        return 0.0
    dist = (codes[inset] != row_codes(X)).sum(axis=1)
    return float(np.min(T[inset] + L * dist))


def extension_table(n: int, d: int, delta: float, L: float | None = None) -> np.ndarray:
    """The extension evaluated at every dataset, indexed like ``dataset_from_index``."""
    if L is None:
        L = 4.0 * delta
    codes, T, max_inner = _domain(n, d)
    inset = np.flatnonzero(max_inner <= delta)
    N = codes.shape[0]
    if inset.size == 0:
        return np.zeros(N)
    out = np.empty(N)
    step = max(1, 2_000_000 // max(1, inset.size * n))
    cin, tin = codes[inset], T[inset]
    for a in range(0, N, step):
        dist = (codes[a:a + step, None, :] != cin[None, :, :]).sum(axis=2)
        out[a:a + step] = (tin[None, :] + L * dist).min(axis=1)
    return out


# ---------------------------------------------------------------- the testers

def _check_mode(X: Dataset, mode: ExtensionMode) -> None:
    if X.kind is not Kind.PM1:
        raise TypeError("Lipschitz tester needs a PM1 dataset")
    if mode is ExtensionMode.EXACT and X.n * X.d > MAX_EXACT_CELLS:
        raise ValueError(f"exact extension is infeasible for n*d = {X.n * X.d} > {MAX_EXACT_CELLS}")


def _extended_value(X: Dataset, delta: float, mode: ExtensionMode) -> Tuple[float, bool]:
    """(T-hat(X), out_of_set flag)."""
    if mode is ExtensionMode.EXACT:
        return mcshane_whitney_extend(X, delta), False
    member, _ = in_set_C(X, delta)
    return float(statistic_T(X).value), not member


def _laplace(scale: float, rng: RngHandle, noiseless: bool) -> float:
    z = laplace_draw(scale if scale > 0 else 1.0, rng, noiseless)
    return z if scale > 0 else 0.0


def extension_threshold(n: int, d: int, epsilon: float, delta: float, beta: float) -> float:
    return 10.0 * n * math.sqrt(d) + 4.0 * delta * math.log(1.0 / beta) / epsilon


def lipschitz_extension_test(X: Dataset, epsilon: float, delta: float, beta: float,
                             mode: ExtensionMode, rng: RngHandle,
                             noiseless: bool = False) -> TestOutcome:
    """Reject iff T-hat(X) + Lap(4 Delta/eps) > 10 n sqrt(d) + 4 Delta ln(1/beta)/eps."""
    _check_mode(X, mode)
    that, out_of_set = _extended_value(X, delta, mode)
    z = that + _laplace(4.0 * delta / epsilon, rng, noiseless)
    thr = extension_threshold(X.n, X.d, epsilon, delta, beta)
    decision = Decision.REJECT if z > thr else Decision.ACCEPT
    return TestOutcome(decision, {
        "tester": "lipschitz-round", "mode": mode.value, "delta": delta,
        "z": z, "threshold": thr, "shortcut_out_of_set": out_of_set,
        "noiseless_debug": noiseless, "private": not noiseless and mode is ExtensionMode.EXACT,
    })


def uniformity_test_lipschitz(X: Dataset, epsilon: float, alpha: float,
                              mode: ExtensionMode, rng: RngHandle,
                              noiseless: bool = False) -> TestOutcome:
    """Recursive tester: screening rounds at eps/M, then a final threshold test."""
    _check_mode(X, mode)
    if not (0 < alpha <= 2):
        raise ValueError("alpha must lie in (0, 2]")
    n, d = X.n, X.d
    beta = 1.0 / (10 * n)
    sched = build_delta_schedule(n, d, epsilon, beta)
    trace = {
        "tester": "lipschitz", "mode": mode.value, "epsilon": epsilon, "alpha": alpha,
        "beta": beta, "cap": sched.cap, "eps_prime": sched.eps_prime,
        "delta_star": sched.delta_star, "round_deltas": list(sched.deltas[:-1]),
        "round_z": [], "round_thresholds": [], "noiseless_debug": noiseless,
        "private": not noiseless and mode is ExtensionMode.EXACT,
    }
    out_of_set = False
    for m, delta in enumerate(sched.deltas[:-1], start=1):
        r = lipschitz_extension_test(X, sched.eps_prime, delta, beta, mode, rng, noiseless)
        trace["round_z"].append(r.trace["z"])
        trace["round_thresholds"].append(r.trace["threshold"])
        out_of_set |= r.trace["shortcut_out_of_set"]
        if r.rejected:
            trace.update(stage=f"round{m}", shortcut_out_of_set=out_of_set)
            return TestOutcome(Decision.REJECT, trace)
    delta = sched.final_delta
    that, flag = _extended_value(X, delta, mode)
    z = that + _laplace(4.0 * delta / sched.eps_prime, rng, noiseless)
    thr = uniformity_threshold(n, alpha)
    rejected = z > thr
    trace.update(final_delta=delta, final_z=z, final_threshold=thr,
                 shortcut_out_of_set=out_of_set or flag,
                 stage="final" if rejected else "none")
    return TestOutcome(Decision.REJECT if rejected else Decision.ACCEPT, trace)


def lipschitz_reject_count(X: Dataset, epsilon: float, alpha: float, trials: int,
                           rng: RngHandle) -> int:
    """Vectorised exact-mode run of ``uniformity_test_lipschitz`` over many trials."""
    _check_mode(X, ExtensionMode.EXACT)
    n, d = X.n, X.d
    beta = 1.0 / (10 * n)
    s = build_delta_schedule(n, d, epsilon, beta)
    alive = np.ones(trials, dtype=bool)
    for delta in s.deltas[:-1]:
        that = mcshane_whitney_extend(X, delta)
        z = that + laplace_array(4.0 * delta / s.eps_prime, trials, rng)
        alive &= ~(z > extension_threshold(n, d, s.eps_prime, delta, beta))
    that = mcshane_whitney_extend(X, s.final_delta)
    z = that + laplace_array(4.0 * s.final_delta / s.eps_prime, trials, rng)
    alive &= ~(z > uniformity_threshold(n, alpha))
    return int(trials - alive.sum())
