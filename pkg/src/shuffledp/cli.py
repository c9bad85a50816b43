"""Command-line front end: parameter reports, simulation sweeps, DP verification.

Exit codes: 0 success/pass, 1 verification failure, 2 usage or feasibility
error. Set SHUFFLEDP_THREADS to change the default worker count for
simulation sweeps; trial records are written in trial order regardless.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import applications, bitsum, privacy_oracle, realsum
from .core import (
    BitDataset,
    InfeasibleBudgetError,
    PrivacyBudget,
    RandomSource,
    RealDataset,
    per_round_budget,
    run_protocol,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "SHUFFLEDP_THREADS"
APPS = ("bitsum", "realsum", "histogram", "selection")

CSV_HEADER = "trial,seed,true_value,estimate,abs_error,runtime_ms"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class ExperimentConfig:
    app: str
    n: int
    eps: float
    delta: float
    trials: int
    seed: int
    beta: float = 0.05
    D: int = 32
    d: int = 16
    r: int | None = None
    lam: float | None = None
    out: str = "simulate.csv"
    threads: int = 1

    def __post_init__(self):
        if self.app not in APPS:
            raise ValueError(f"unknown app {self.app!r}")
        for name in ("n", "eps", "delta", "trials", "beta", "D", "d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.eps, self.delta)


def _bitsum_report(n: int, budget: PrivacyBudget, beta: float) -> dict:
    report: dict = {"app": "bitsum", "n": n, "eps": budget.eps, "delta": budget.delta}
    try:
        report["lambda_closed_form"] = bitsum.lambda_closed_form(n, budget)
    except InfeasibleBudgetError as exc:
        report["lambda_closed_form"] = None
        report["lambda_closed_form_note"] = str(exc)
    lam = bitsum.lambda_star(n, budget)
    report["lambda_star"] = lam
    report["eps_of_lambda_star"] = bitsum.epsilon_of_lambda(n, lam, budget.delta)
    report["accuracy_bound"] = bitsum.bitsum_accuracy_bound(n, lam, beta)
    report["accuracy_beta"] = beta
    local = privacy_oracle.verify_randomizer_local_dp(n, lam, budget.eps + math.log(n))
    report["randomizer_local_eps"] = local.eps_measured
    report["local_eps_bound"] = budget.eps + math.log(n)
    report["local_bound_holds"] = local.passed
    return report


def _realsum_report(n: int, budget: PrivacyBudget, beta: float, r: int | None) -> dict:
    params = realsum.realsum_params(n, budget, r=r)
    eps0, delta0 = realsum.split_budget(budget.eps, budget.delta, params.r)
    return {
        "app": "realsum",
        "n": n,
        "eps": budget.eps,
        "delta": budget.delta,
        "r": params.r,
        "eps0_split": eps0,
        "delta0": delta0,
        "lambda": params.lam,
        "eps_per_round_realized": bitsum.epsilon_of_lambda(n, params.lam, delta0),
        "accuracy_bound": realsum.realsum_accuracy_bound(params, beta),
        "accuracy_beta": beta,
    }


def _histogram_report(n: int, budget: PrivacyBudget, beta: float, D: int) -> dict:
    round_budget = PrivacyBudget(budget.eps / 2.0, budget.delta / 2.0)
    params = bitsum.params_for_budget(n, round_budget)
    return {
        "app": "histogram",
        "n": n,
        "eps": budget.eps,
        "delta": budget.delta,
        "D": D,
        "round_eps": round_budget.eps,
        "round_delta": round_budget.delta,
        "lambda": params.lam,
        "per_bucket_accuracy_bound": bitsum.bitsum_accuracy_bound(n, params.lam, beta),
        "accuracy_beta": beta,
        "target_max_error": n / 10.0,
    }


def _selection_report(n: int, budget: PrivacyBudget, d: int) -> dict:
    eps0, delta0, delta_prime = per_round_budget(budget, d)
    params = bitsum.params_for_budget(n, PrivacyBudget(eps0, delta0))
    return {
        "app": "selection",
        "n": n,
        "eps": budget.eps,
        "delta": budget.delta,
        "d": d,
        "eps0": eps0,
        "delta0": delta0,
        "delta_prime": delta_prime,
        "lambda": params.lam,
        "target_margin": n / 10.0,
    }


def cmd_params(args) -> int:
    budget = PrivacyBudget(args.eps, args.delta)
    if args.app == "bitsum":
        report = _bitsum_report(args.n, budget, args.beta)
    elif args.app == "realsum":
        report = _realsum_report(args.n, budget, args.beta, args.r)
    elif args.app == "histogram":
        report = _histogram_report(args.n, budget, args.beta, args.D)
    else:
        report = _selection_report(args.n, budget, args.d)
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        for key, value in report.items():
            print(f"{key}: {value}")
    return EXIT_OK


def _make_dataset(config: ExperimentConfig):
    gen = RandomSource(config.seed, stream=0).generator()
    if config.app == "bitsum":
        return BitDataset(gen.integers(0, 2, size=config.n))
    if config.app == "realsum":
        return RealDataset(gen.random(config.n))
    if config.app == "histogram":
        return applications.CategoricalDataset(
            gen.integers(0, config.D, size=config.n), D=config.D
        )
    rows = (gen.random((config.n, config.d)) < 0.3).astype(np.int8)
    rows[:, 0] = gen.random(config.n) < 0.5  # planted column, margin ~ n/5
    return applications.BinaryMatrixDataset(rows)


def _make_trial_runner(config: ExperimentConfig, dataset):
    budget = config.budget()
    if config.app == "bitsum":
        lam = config.lam if config.lam is not None else bitsum.lambda_star(config.n, budget)
        params = bitsum.BitSumParams(config.n, lam)
        randomizer, analyzer = bitsum.BitSumRandomizer(params), bitsum.BitSumAnalyzer(params)
        alpha = bitsum.bitsum_accuracy_bound(config.n, lam, config.beta)
        true_value = float(dataset.total())

        def run(rs):
            estimate, _ = run_protocol(randomizer, analyzer, dataset, rs)
            return true_value, float(estimate)

        return run, alpha, {"lambda": lam}

    if config.app == "realsum":
        if config.lam is not None and config.r is not None:
            params = realsum.RealSumParams(config.n, config.lam, config.r)
        else:
            params = realsum.realsum_params(config.n, budget, r=config.r)
        randomizer, analyzer = realsum.RealSumRandomizer(params), realsum.RealSumAnalyzer(params)
        alpha = realsum.realsum_accuracy_bound(params, config.beta)
        true_value = float(dataset.total())

        def run(rs):
            estimate, _ = run_protocol(randomizer, analyzer, dataset, rs)
            return true_value, float(estimate)

        return run, alpha, {"lambda": params.lam, "r": params.r}

    if config.app == "histogram":
        exact = dataset.exact_histogram()
        round_budget = PrivacyBudget(budget.eps / 2.0, budget.delta / 2.0)
        lam = bitsum.lambda_star(config.n, round_budget)

        def run(rs):
            v = applications.histogram_protocol(dataset, budget, rs)
            return 0.0, float(np.abs(v - exact).max())

        return run, config.n / 10.0, {"lambda": lam, "D": config.D}

    sums = dataset.column_sums()

    def run(rs):
        j = applications.selection_protocol(dataset, budget, rs)
        return float(sums.max()), float(sums[j])

    return run, config.n / 10.0, {"d": config.d}


def run_trials(config: ExperimentConfig):
    """Execute all trials; returns (records, alpha, params_info).

    Each trial draws from its own stream (stream id = trial index + 1), so
    results are reproducible for any thread count.
    """
    dataset = _make_dataset(config)
    trial, alpha, info = _make_trial_runner(config, dataset)

    def one(index: int):
        rs = RandomSource(config.seed, stream=index + 1)
        start = time.perf_counter()
        true_value, estimate = trial(rs)
        runtime_ms = (time.perf_counter() - start) * 1000.0
        return (index, rs.stream, true_value, estimate, abs(estimate - true_value), runtime_ms)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(pool.map(one, range(config.trials)))
    else:
        records = [one(i) for i in range(config.trials)]
    return records, alpha, info


def _summarize(config: ExperimentConfig, records, alpha: float, info: dict) -> dict:
    errors = np.array([rec[4] for rec in records])
    # Theorem-style tails are strict for bitsum (> alpha) and inclusive for
    # realsum (>= alpha); the distinction is immaterial for the others.
    exceed = errors >= alpha if config.app == "realsum" else errors > alpha
    beta_limit = 2 * config.beta if config.app == "realsum" else config.beta
    slack = 3.0 * math.sqrt(beta_limit * (1 - beta_limit) / config.trials)
    empirical_beta = float(exceed.mean())
    return {
        "app": config.app,
        "n": config.n,
        "eps": config.eps,
        "delta": config.delta,
        "trials": config.trials,
        "seed": config.seed,
        "params": info,
        "mean_abs_error": float(errors.mean()),
        "rmse": float(np.sqrt((errors**2).mean())),
        "alpha_theoretical": alpha,
        "beta_theoretical": beta_limit,
        "empirical_beta": empirical_beta,
        "bound_pass": bool(empirical_beta <= beta_limit + slack),
    }


def cmd_simulate(config: ExperimentConfig) -> int:
    records, alpha, info = run_trials(config)
    lines = [CSV_HEADER]
    for index, stream, true_value, estimate, abs_error, runtime_ms in records:
        lines.append(
            f"{index},{stream},{_fmt(true_value)},{_fmt(estimate)},"
            f"{_fmt(abs_error)},{runtime_ms:.3f}"
        )
    with open(config.out, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    print(json.dumps(_summarize(config, records, alpha, info), sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.mode == "shuffled":
        budget = PrivacyBudget(args.eps, args.delta)
        report = privacy_oracle.verify_shuffled_dp(args.n, args.lam, budget)
        print(json.dumps(report.to_json_dict(), sort_keys=True))
        return EXIT_OK if report.passed else EXIT_FAIL
    if args.mode == "local":
        report = privacy_oracle.verify_randomizer_local_dp(args.n, args.lam, args.eps)
        print(json.dumps(report.to_json_dict(), sort_keys=True))
        return EXIT_OK if report.passed else EXIT_FAIL
    result = privacy_oracle.empirical_equivalence_test(
        args.n, args.lam, args.k, args.trials, RandomSource(args.seed)
    )
    passed = result.pvalue > args.level
    print(
        json.dumps(
            {
                "mode": "equivalence",
                "n": args.n,
                "lambda": args.lam,
                "k": args.k,
                "trials": args.trials,
                "statistic": result.statistic,
                "dof": result.dof,
                "pvalue": result.pvalue,
                "level": args.level,
                "pass": passed,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK if passed else EXIT_FAIL


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shuffledp",
        description="Differentially private sums in the shuffled model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="report protocol parameters for a budget")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--app", choices=APPS, default="bitsum")
    p.add_argument("--beta", type=float, default=0.05, help="accuracy failure probability")
    p.add_argument("--r", type=int, default=None, help="override messages per user (realsum)")
    p.add_argument("--D", type=int, default=32, help="histogram domain size")
    p.add_argument("--d", type=int, default=16, help="selection dimension")
    p.add_argument("--json", action="store_true")

    s = sub.add_parser("simulate", help="run Monte-Carlo trials, emit CSV + summary JSON")
    s.add_argument("--config", type=str, default=None, help="JSON config file (flags win)")
    s.add_argument("--app", choices=APPS, default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--delta", type=float, default=None)
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--D", type=int, default=None)
    s.add_argument("--d", type=int, default=None)
    s.add_argument("--r", type=int, default=None)
    s.add_argument("--lam", type=float, default=None)
    s.add_argument("--out", type=str, default=None)
    s.add_argument("--threads", type=int, default=None)

    v = sub.add_parser("verify", help="run the privacy oracle")
    v.add_argument("--mode", choices=("shuffled", "local", "equivalence"), required=True)
    v.add_argument("--n", type=int, required=True)
    v.add_argument("--lam", type=float, required=True)
    v.add_argument("--eps", type=float, default=1.0)
    v.add_argument("--delta", type=float, default=1e-6)
    v.add_argument("--k", type=int, default=0, help="ones count (equivalence mode)")
    v.add_argument("--trials", type=int, default=10**6, help="samples (equivalence mode)")
    v.add_argument("--level", type=float, default=1e-3, help="p-value pass level")
    v.add_argument("--seed", type=int, default=0)
    return parser


_SIMULATE_DEFAULTS = {
    "app": "bitsum",
    "n": 1000,
    "eps": 1.0,
    "delta": 1e-6,
    "trials": 100,
    "seed": 0,
    "beta": 0.05,
    "D": 32,
    "d": 16,
    "r": None,
    "lam": None,
    "out": "simulate.csv",
}


def _simulate_config(args) -> ExperimentConfig:
    merged = dict(_SIMULATE_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            file_conf = json.load(fh)
        unknown = set(file_conf) - set(_SIMULATE_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_conf)
    for key in _SIMULATE_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    return ExperimentConfig(threads=threads, **merged)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "params":
            return cmd_params(args)
        if args.command == "simulate":
            return cmd_simulate(_simulate_config(args))
        return cmd_verify(args)
    except (InfeasibleBudgetError, privacy_oracle.OracleGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
