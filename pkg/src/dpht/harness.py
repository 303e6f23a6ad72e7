"""Monte-Carlo power experiments and an empirical privacy auditor."""

from __future__ import annotations

import configparser
import csv
import enum
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from dpht.core import (Dataset, GaussianSpec, Kind, ProductSpec, RngHandle, TestOutcome,
                       sample_gaussian, sample_product)
from dpht.filter_tester import filter_reject_count, uniformity_test_filter
from dpht.gaussian_tester import Backend, gaussian_test_direct, gaussian_test_via_reduction
from dpht.lipschitz_tester import (ExtensionMode, dataset_from_index, lipschitz_reject_count,
                                   uniformity_test_lipschitz)
from dpht.mechanisms import laplace_array
from dpht.statistic import nonprivate_uniformity_test

CSV_COLUMNS = ("tester", "n", "d", "alpha", "epsilon", "delta", "hypothesis", "trials",
               "rejects", "reject_rate", "ci_halfwidth", "seconds")


# ------------------------------------------------------------------ testers

@dataclass(frozen=True)
class TesterParams:
    __test__ = False
    epsilon: float = 1.0
    delta: float = 1e-3
    alpha: float = 0.5
    noiseless: bool = False


def _run_filter(X, p, rng):
    return uniformity_test_filter(X, p.epsilon, p.delta, p.alpha, rng, p.noiseless)[0]


def _run_lipschitz(X, p, rng):
    return uniformity_test_lipschitz(X, p.epsilon, p.alpha, ExtensionMode.SHORTCUT, rng, p.noiseless)


def _run_lipschitz_exact(X, p, rng):
    return uniformity_test_lipschitz(X, p.epsilon, p.alpha, ExtensionMode.EXACT, rng, p.noiseless)


def _run_nonprivate(X, p, rng):
    return nonprivate_uniformity_test(X, p.alpha)


def _run_gauss_direct(X, p, rng):
    return gaussian_test_direct(X, p.epsilon, p.delta, p.alpha, rng, p.noiseless)[0]


def _run_gauss_reduce(X, p, rng):
    return gaussian_test_via_reduction(X, p.epsilon, p.delta, p.alpha, Backend.FILTER, rng, p.noiseless)


def _run_gauss_reduce_lipschitz(X, p, rng):
    return gaussian_test_via_reduction(X, p.epsilon, p.delta, p.alpha, Backend.LIPSCHITZ, rng, p.noiseless)


# tester id -> (runner, input kind)
TESTERS: Dict[str, Tuple[Callable[[Dataset, TesterParams, RngHandle], TestOutcome], Kind]] = {
    "filter": (_run_filter, Kind.PM1),
    "lipschitz": (_run_lipschitz, Kind.PM1),
    "lipschitz-exact": (_run_lipschitz_exact, Kind.PM1),
    "nonprivate": (_run_nonprivate, Kind.PM1),
    "gauss-direct": (_run_gauss_direct, Kind.REAL),
    "gauss-reduce": (_run_gauss_reduce, Kind.REAL),
    "gauss-reduce-lipschitz": (_run_gauss_reduce_lipschitz, Kind.REAL),
}


def run_tester(tester: str, X: Dataset, params: TesterParams, rng: RngHandle) -> TestOutcome:
    try:
        fn, kind = TESTERS[tester]
    except KeyError:
        raise ValueError(f"unknown tester {tester!r}; choose from {sorted(TESTERS)}") from None
    if X.kind is not kind:
        raise ValueError(f"tester {tester!r} needs {kind.value} data, got {X.kind.value}")
    return fn(X, params, rng)


# --------------------------------------------------------- power experiments

@dataclass(frozen=True)
class DistSpec:
    family: str           # "product" or "gaussian"
    means: Tuple[float, ...]

    def kind(self) -> Kind:
        return Kind.PM1 if self.family == "product" else Kind.REAL

    def full_means(self, d: int) -> np.ndarray:
        if len(self.means) > d:
            raise ValueError(f"{len(self.means)} means given for d={d}")
        m = np.zeros(d)
        m[:len(self.means)] = self.means
        return m

    def sample(self, n: int, d: int, rng: RngHandle) -> Dataset:
        if self.family == "product":
            return sample_product(ProductSpec(self.full_means(d)), n, rng)
        if self.family == "gaussian":
            return sample_gaussian(GaussianSpec(self.full_means(d)), n, rng)
        raise ValueError(f"unknown family {self.family!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    tester: str
    d: int
    params: TesterParams
    null: DistSpec
    alternative: DistSpec
    n_grid: Tuple[int, ...]
    trials: int
    seed: int = 0
    workers: int = 1
    record_timing: bool = False
    output: Optional[str] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.n_grid:
            raise ValueError("n grid must be nonempty")
        if self.tester not in TESTERS:
            raise ValueError(f"unknown tester {self.tester!r}")
        kind = TESTERS[self.tester][1]
        for spec in (self.null, self.alternative):
            if spec.family not in ("product", "gaussian"):
                raise ValueError(f"unknown family {spec.family!r}")
            if spec.kind() is not kind:
                raise ValueError(f"tester {self.tester!r} needs {kind.value} data, "
                                 f"but a spec has family {spec.family!r}")
            spec.full_means(self.d)


def _floats(s: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in s.replace(",", " ").split())


def parse_experiment_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    for sec in ("experiment", "null", "alternative"):
        if not cp.has_section(sec):
            raise ValueError(f"config is missing the [{sec}] section")
    e = cp["experiment"]
    params = TesterParams(epsilon=e.getfloat("epsilon", 1.0), delta=e.getfloat("delta", 1e-3),
                          alpha=e.getfloat("alpha", 0.5))

    def spec(sec):
        s = cp[sec]
        return DistSpec(s.get("family", "product").strip(), _floats(s.get("means", "")))

    return ExperimentConfig(
        tester=e.get("tester").strip(), d=e.getint("d"), params=params,
        null=spec("null"), alternative=spec("alternative"),
        n_grid=tuple(int(v) for v in _floats(e.get("n"))),
        trials=e.getint("trials"), seed=e.getint("seed", 0), workers=e.getint("workers", 1),
        record_timing=e.getboolean("record_timing", False), output=e.get("output"),
    )


@dataclass(frozen=True)
class PowerRecord:
    tester: str
    n: int
    d: int
    alpha: float
    epsilon: float
    delta: float
    hypothesis: str
    trials: int
    rejects: int
    reject_rate: float
    ci_halfwidth: float
    wall_time: Optional[float] = None
    flagged: int = 0   # runs where the shortcut left C(Delta)

    @property
    def interval(self) -> Tuple[float, float]:
        """reject_rate +- ci_halfwidth, clamped to [0, 1]."""
        return (max(0.0, self.reject_rate - self.ci_halfwidth),
                min(1.0, self.reject_rate + self.ci_halfwidth))


def normal_ci_halfwidth(rate: float, trials: int) -> float:
    """95% normal-approximation half width."""
    return 1.96 * math.sqrt(rate * (1.0 - rate) / trials)


def _run_trials(args) -> Tuple[int, int]:
    tester, params, spec, n, d, seed, cell, lo, hi = args
    rejects = flagged = 0
    for t in range(lo, hi):
        h = RngHandle(seed, t, (cell,))
        X = spec.sample(n, d, h.child(0))
        out = run_tester(tester, X, params, h.child(1))
        rejects += out.rejected
        flagged += bool(out.trace.get("shortcut_out_of_set", False))
    return rejects, flagged


def run_power_experiment(cfg: ExperimentConfig, params: Optional[TesterParams] = None
                         ) -> List[PowerRecord]:
    """Reject rates for every n and hypothesis. Trial t of cell c uses stream t, path (c,)."""
    params = params or cfg.params
    cells = []
    for i, n in enumerate(cfg.n_grid):
        for j, (hyp, spec) in enumerate((("null", cfg.null), ("alt", cfg.alternative))):
            cells.append((2 * i + j, n, hyp, spec))
    workers = max(1, cfg.workers)
    chunk = max(1, math.ceil(cfg.trials / workers))
    records = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for cell, n, hyp, spec in cells:
            tasks = [(cfg.tester, params, spec, n, cfg.d, cfg.seed, cell, lo, min(lo + chunk, cfg.trials))
                     for lo in range(0, cfg.trials, chunk)]
            t0 = time.perf_counter()
            results = list(pool.map(_run_trials, tasks)) if pool else [_run_trials(t) for t in tasks]
            wall = time.perf_counter() - t0
            rejects = sum(r for r, _ in results)
            rate = rejects / cfg.trials
            records.append(PowerRecord(
                tester=cfg.tester, n=n, d=cfg.d, alpha=params.alpha, epsilon=params.epsilon,
                delta=params.delta, hypothesis=hyp, trials=cfg.trials, rejects=rejects,
                reject_rate=rate, ci_halfwidth=normal_ci_halfwidth(rate, cfg.trials),
                wall_time=wall if cfg.record_timing else None,
                flagged=sum(f for _, f in results)))
    finally:
        if pool:
            pool.shutdown()
    return records


def records_to_csv(records: Sequence[PowerRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.tester, r.n, r.d, repr(r.alpha), repr(r.epsilon), repr(r.delta),
                    r.hypothesis, r.trials, r.rejects, repr(r.reject_rate),
                    f"{r.ci_halfwidth:.6f}", "" if r.wall_time is None else f"{r.wall_time:.3f}"])
    return buf.getvalue()


# ---------------------------------------------------------------- auditing

class Verdict(enum.Enum):
    CONSISTENT = "consistent"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass
class AuditReport:
    tester: str
    n: int
    d: int
    pairs: int
    eps_hat: float
    eps_point: float
    eps_claimed: float
    delta_allowance: float
    trials: int
    verdict: Verdict
    worst_pair: Optional[Tuple[int, int, str]] = None
    reject_rates: List[float] = field(default_factory=list)


RejectCounter = Callable[[Dataset, int, RngHandle], int]


def scalar_counter(run: Callable[[Dataset, RngHandle], TestOutcome]) -> RejectCounter:
    """Turn a single-run tester into a reject counter; trial t uses ``rng.child(t)``."""
    def count(X: Dataset, trials: int, rng: RngHandle) -> int:
        return sum(run(X, rng.child(t)).rejected for t in range(trials))
    return count


def all_datasets(n: int, d: int) -> List[Dataset]:
    return [dataset_from_index(k, n, d) for k in range(1 << (n * d))]


def neighbor_index_pairs(n: int, d: int) -> List[Tuple[int, int]]:
    """Ordered pairs of dataset indices that differ in exactly one row."""
    mask = (1 << d) - 1
    out = []
    for a in range(1 << (n * d)):
        for j in range(n):
            row = (a >> (j * d)) & mask
            for r in range(1 << d):
                if r != row:
                    out.append((a, a ^ ((row ^ r) << (j * d))))
    return out


def clopper_pearson(k: int, trials: int, level: float) -> Tuple[float, float]:
    """Two-sided exact binomial interval with coverage ``level``."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, trials - k + 1))
    hi = 1.0 if k == trials else float(stats.beta.ppf(1 - a / 2, k + 1, trials - k))
    return lo, hi


def _log_ratio(num: float, den: float) -> float:
    if num <= 0:
        return -math.inf
    if den <= 0:
        return math.inf
    return math.log(num / den)


def audit_privacy(counter: RejectCounter, n: int, d: int, trials: int, rng: RngHandle,
                  epsilon: float, delta: float = 0.0, tester: str = "",
                  pairs: Optional[Sequence[Tuple[Dataset, Dataset]]] = None,
                  confidence: float = 0.95, max_cells: int = 8) -> AuditReport:
    """Estimate the worst output likelihood ratio over neighbouring datasets.

    Reject probabilities are estimated once per dataset (dataset i uses
    ``rng.child(i)``). Every probability gets a Clopper-Pearson interval with
    a Bonferroni split over datasets, so all intervals hold jointly with
    probability ``confidence``. For a pair (X, X') and output b,
    eps_hat uses ln((lower_b(X) - delta) / upper_b(X')); the verdict is
    Violated only if that conservative value exceeds ``epsilon``.
    """
    if pairs is None:
        if n * d > max_cells:
            raise ValueError(f"enumerating all neighbours needs n*d <= {max_cells}; pass pairs")
        datasets = all_datasets(n, d)
        idx_pairs = neighbor_index_pairs(n, d)
    else:
        datasets, key_to_idx, idx_pairs = [], {}, []
        for X, Y in pairs:
            ij = []
            for Z in (X, Y):
                key = (Z.kind, Z.entries.shape, Z.entries.tobytes())
                if key not in key_to_idx:
                    key_to_idx[key] = len(datasets)
                    datasets.append(Z)
                ij.append(key_to_idx[key])
            idx_pairs.append(tuple(ij))
    m = len(datasets)
    level = 1.0 - (1.0 - confidence) / m
    k = [counter(X, trials, rng.child(i)) for i, X in enumerate(datasets)]
    rate = [ki / trials for ki in k]
    ci = [clopper_pearson(ki, trials, level) for ki in k]
    # (point, lower, upper) for output "reject" and "accept"
    probs = [{"reject": (rate[i], ci[i][0], ci[i][1]),
              "accept": (1 - rate[i], 1 - ci[i][1], 1 - ci[i][0])} for i in range(m)]
    eps_hat, eps_point, worst = 0.0, 0.0, None
    for a, b in idx_pairs:
        for out in ("reject", "accept"):
            pa, la, _ = probs[a][out]
            pb, _, ub = probs[b][out]
            e = _log_ratio(la - delta, ub)
            if e > eps_hat:
                eps_hat, worst = e, (a, b, out)
            eps_point = max(eps_point, _log_ratio(pa - delta, pb))
    if eps_hat > epsilon:
        verdict = Verdict.VIOLATED
    elif eps_point > epsilon:
        verdict = Verdict.INCONCLUSIVE
    else:
        verdict = Verdict.CONSISTENT
    return AuditReport(tester=tester, n=n, d=d, pairs=len(idx_pairs), eps_hat=eps_hat,
                       eps_point=eps_point, eps_claimed=epsilon, delta_allowance=delta,
                       trials=trials, verdict=verdict, worst_pair=worst, reject_rates=rate)


# ---------------------------------------------------- audit reject counters

def constant_counter(X: Dataset, trials: int, rng: RngHandle) -> int:
    return 0


def laplace_control_counter(epsilon: float) -> RejectCounter:
    """Reject iff sum(X) + Lap(2d/eps) > 0, an exactly calibrated eps-DP mechanism."""
    def count(X: Dataset, trials: int, rng: RngHandle) -> int:
        s = float(X.entries.sum())
        return int(np.sum(s + laplace_array(2.0 * X.d / epsilon, trials, rng) > 0))
    return count


def audit_counter(tester: str, params: TesterParams) -> RejectCounter:
    """Reject counter for a tester id, vectorised where available."""
    if tester == "filter":
        return lambda X, T, r: filter_reject_count(X, params.epsilon, params.delta, params.alpha, T, r)
    if tester == "lipschitz-exact":
        return lambda X, T, r: lipschitz_reject_count(X, params.epsilon, params.alpha, T, r)
    if tester == "laplace":
        return laplace_control_counter(params.epsilon)
    if tester == "constant":
        return constant_counter
    if tester == "nonprivate":
        return lambda X, T, r: T * nonprivate_uniformity_test(X, params.alpha).rejected
    if tester in TESTERS:
        return scalar_counter(lambda X, r: run_tester(tester, X, params, r))
    raise ValueError(f"unknown tester {tester!r}")


# claimed (eps, delta) as multiples of the tester's parameters
CLAIMS = {"filter": (4, 13), "gauss-direct": (5, 17), "lipschitz-exact": (1, 0),
          "laplace": (1, 0), "constant": (1, 0), "nonprivate": (1, 0)}


def claimed_guarantee(tester: str, params: TesterParams) -> Tuple[float, float]:
    fe, fd = CLAIMS.get(tester, (1, 0))
    return fe * params.epsilon, fd * params.delta
