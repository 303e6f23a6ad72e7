"""Command-line entry point ``dpht``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from dpht.core import (GaussianSpec, ProductSpec, RngHandle, format_dataset,
                       from_binary, read_dataset, sample_gaussian, sample_product, to_binary)
from dpht.gaussian_tester import sign_reduce
from dpht.harness import (TESTERS, TesterParams, audit_counter, audit_privacy, claimed_guarantee,
                          parse_experiment_config, records_to_csv, run_power_experiment,
                          run_tester)
from dpht.reductions import (ReductionRefused, balanced_reduce, extreme_to_univariate,
                             format_univariate, read_univariate, univariate_to_extreme)

BANNER = "NON-PRIVATE: noiseless debug mode, every noise draw is zero; outputs carry no privacy guarantee"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def format_record(pairs: Iterable[Tuple[str, object]]) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in pairs)


def _floats(s: str) -> List[float]:
    return [float(t) for t in s.replace(",", " ").split()]


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_sample(a) -> str:
    means = _floats(a.means) if a.means else []
    d = a.d or len(means)
    if d < 1:
        raise SystemExit("sample: give --means or --d")
    m = np.zeros(d)
    m[:len(means)] = means
    rng = RngHandle(a.seed, a.stream)
    if a.family == "product":
        X = sample_product(ProductSpec(m), a.n, rng)
    else:
        X = sample_gaussian(GaussianSpec(m), a.n, rng)
    return format_dataset(X)


def cmd_test(a) -> str:
    X = read_dataset(a.data)
    params = TesterParams(a.epsilon, a.delta, a.alpha, a.noiseless_debug)
    out = run_tester(a.tester, X, params, RngHandle(a.seed, a.stream))
    return format_record([("decision", out.decision), *out.trace.items()])


def cmd_reduce(a) -> str:
    rng = RngHandle(a.seed, a.stream)
    if a.kind == "sign":
        return format_dataset(sign_reduce(read_dataset(a.data)))
    if a.kind == "balanced":
        if not a.q:
            raise SystemExit("reduce --kind balanced needs --q")
        return format_dataset(balanced_reduce(read_dataset(a.data), ProductSpec(_floats(a.q)), rng))
    if a.kind == "extreme2uni":
        return format_univariate(extreme_to_univariate(to_binary(read_dataset(a.data))))
    if a.n is None:
        raise SystemExit("reduce --kind uni2extreme needs --n")
    try:
        B = univariate_to_extreme(read_univariate(a.data), a.n, rng)
    except ReductionRefused as exc:
        return format_record([("refused", True), ("reason", str(exc))])
    return format_dataset(from_binary(B[:a.n]))


def cmd_experiment(a) -> str:
    cfg = parse_experiment_config(Path(a.config).read_text(encoding="utf-8"))
    if a.seed_given:
        cfg = replace(cfg, seed=a.seed)
    if a.noiseless_debug:
        cfg = replace(cfg, params=replace(cfg.params, noiseless=True))
    text = records_to_csv(run_power_experiment(cfg))
    if not a.out and cfg.output:
        a.out = cfg.output
    return text


def cmd_audit(a) -> str:
    params = TesterParams(a.epsilon, a.delta, a.alpha, a.noiseless_debug)
    eps_c, delta_c = claimed_guarantee(a.tester, params)
    rep = audit_privacy(audit_counter(a.tester, params), a.n, a.d, a.trials,
                        RngHandle(a.seed, a.stream), eps_c, delta_c, tester=a.tester)
    return format_record([
        ("tester", rep.tester), ("n", rep.n), ("d", rep.d), ("pairs", rep.pairs),
        ("trials", rep.trials), ("eps_claimed", rep.eps_claimed),
        ("delta_allowance", rep.delta_allowance), ("eps_hat", rep.eps_hat),
        ("eps_point", rep.eps_point), ("verdict", rep.verdict),
        ("worst_pair", list(rep.worst_pair) if rep.worst_pair else None)])


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=d if suppress else 0, help="u64 seed")
    p.add_argument("--stream", type=int, default=d if suppress else 0, help="u64 stream id")
    p.add_argument("--noiseless-debug", action="store_true", default=d if suppress else False,
                   help="zero every noise draw (NOT private)")
    p.add_argument("--out", default=d if suppress else None, help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpht", description="Private identity testing toolkit")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw a dataset")
    s.add_argument("--family", choices=["product", "gaussian"], default="product")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int)
    s.add_argument("--means", default="", help="leading means, padded with zeros to d")

    t = sub.add_parser("test", help="run a tester on a dataset file")
    t.add_argument("--tester", choices=sorted(TESTERS), required=True)
    t.add_argument("--data", required=True)
    for name, default in (("epsilon", 1.0), ("delta", 1e-3), ("alpha", 0.5)):
        t.add_argument(f"--{name}", type=float, default=default)

    r = sub.add_parser("reduce", help="apply a reduction to a data file")
    r.add_argument("--kind", choices=["sign", "balanced", "extreme2uni", "uni2extreme"], required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--q", help="reference means for --kind balanced")
    r.add_argument("--n", type=int, help="rows wanted for --kind uni2extreme")

    e = sub.add_parser("experiment", help="run a power experiment from a config file")
    e.add_argument("--config", required=True)

    au = sub.add_parser("audit", help="empirical privacy audit over all neighbouring datasets")
    au.add_argument("--tester", choices=["filter", "lipschitz-exact", "laplace", "constant", "nonprivate"],
                    required=True)
    au.add_argument("--n", type=int, required=True)
    au.add_argument("--d", type=int, required=True)
    au.add_argument("--trials", type=int, default=100_000)
    for name, default in (("epsilon", 1.0), ("delta", 0.05), ("alpha", 0.5)):
        au.add_argument(f"--{name}", type=float, default=default)

    for sp in (s, t, r, e, au):
        _global_flags(sp, suppress=True)
    return p


COMMANDS = {"sample": cmd_sample, "test": cmd_test, "reduce": cmd_reduce,
            "experiment": cmd_experiment, "audit": cmd_audit}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    a = build_parser().parse_args(argv)
    a.seed_given = any(x == "--seed" or x.startswith("--seed=") for x in argv)
    if a.noiseless_debug:
        print(BANNER, file=sys.stderr)
    try:
        text = COMMANDS[a.command](a)
    except (ValueError, TypeError, OSError) as exc:
        print(f"dpht: error: {exc}", file=sys.stderr)
        return 2
    _emit(text, a.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
