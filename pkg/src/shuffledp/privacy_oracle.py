"""Exact, independent verification of the protocols' privacy claims.

The shuffled bit-sum protocol releases (up to a random relabeling) only the
sum of the users' messages, whose law on a dataset with k ones is the law
of the central sampling algorithm: draw s ~ Bin(n, lambda/n), replace a
uniformly random s-subset of the inputs by fair coins, output the sum.
This module computes that law exactly, measures the tight delta at a given
eps between neighboring datasets (hockey-stick divergence), and checks the
local randomizer's pure-DP level. A chi-square harness ties the analytic
law back to the actual sampled protocol.

Probability mass functions are produced by scipy's log-gamma based
implementations and exponentiated only at the end; the divergence is
accumulated termwise in max(0, .) form so underflow cannot create
spurious negative mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import binom, chi2, hypergeom

from . import bitsum
from .core import PrivacyBudget, as_generator

_PMF_SUM_TOL = 1e-10


class OracleGuardError(ValueError):
    """Exact computation refused: problem size exceeds the configured guard."""


@dataclass(frozen=True, eq=False)
class DiscretePMF:
    """An exact probability mass function over {0, ..., n}."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a non-empty 1-d array")
        if (probs < 0).any():
            raise ValueError("probabilities must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > _PMF_SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def support_size(self) -> int:
        return self.probs.size

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)


@dataclass(frozen=True)
class DPReport:
    """Outcome of an exact (eps, delta) verification.

    ``passed`` holds iff delta_measured <= delta_allowed with both neighbor
    directions included in the measurement. (The JSON key is "pass";
    that name is reserved in Python.) ``eps_measured`` is filled by the
    local-randomizer check with the realized pure-DP level.
    """

    eps_tested: float
    delta_measured: float
    delta_allowed: float
    worst_pair: dict
    passed: bool
    eps_measured: Optional[float] = None

    def to_json_dict(self) -> dict:
        out = {
            "eps_tested": self.eps_tested,
            "delta_measured": self.delta_measured,
            "delta_allowed": self.delta_allowed,
            "worst_pair": self.worst_pair,
            "pass": self.passed,
        }
        if self.eps_measured is not None:
            out["eps_measured"] = self.eps_measured
        return out


def c_lambda_pmf(k: int, n: int, lam: float) -> DiscretePMF:
    """Exact law of the shuffled sum on any dataset with k ones.

    Each user lands in the replaced set independently with probability
    lambda/n (a Bin(n, lambda/n)-sized uniform subset is exactly that), so
    a one-bit contributes Ber(1 - lambda/2n) and a zero-bit contributes
    Ber(lambda/2n): the sum is Bin(k, 1 - lambda/2n) + Bin(n-k, lambda/2n).
    lambda = n is allowed here (the law collapses to Bin(n, 1/2)) even
    though the runnable protocol excludes it.
    """
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, n], got k={k}, n={n}")
    if not 0 <= lam <= n:
        raise ValueError(f"lambda must be in [0, n], got {lam}")
    q = lam / (2.0 * n)
    ones_part = binom.pmf(np.arange(k + 1), k, 1.0 - q)
    zeros_part = binom.pmf(np.arange(n - k + 1), n - k, q)
    return DiscretePMF(np.convolve(ones_part, zeros_part))


def c_lambda_pmf_mixture(k: int, n: int, lam: float) -> DiscretePMF:
    """Same law by direct enumeration of the central sampling algorithm.

    Mixes, over the replaced-set size s ~ Bin(n, lambda/n) and the
    hypergeometric count h of ones falling inside it, the coin-sum law
    shifted by the k - h surviving ones:

        P[t] = sum_s Bin(n, lambda/n)(s)
               * sum_h Hyp(n, k, s)(h) * Bin(s, 1/2)(t - (k - h))

    O(n^3) per call; kept as an independent cross-check of c_lambda_pmf
    at small n.
    """
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, n], got k={k}, n={n}")
    if not 0 <= lam <= n:
        raise ValueError(f"lambda must be in [0, n], got {lam}")
    out = np.zeros(n + 1)
    size_weights = binom.pmf(np.arange(n + 1), n, lam / n)
    for s in range(n + 1):
        w = size_weights[s]
        if w == 0.0:
            continue
        h_lo = max(0, s - (n - k))
        h_hi = min(k, s)
        hs = np.arange(h_lo, h_hi + 1)
        h_weights = hypergeom.pmf(hs, n, k, s)
        coin = binom.pmf(np.arange(s + 1), s, 0.5)
        for h, wh in zip(hs, h_weights):
            lo = k - int(h)
            out[lo : lo + s + 1] += w * wh * coin
    return DiscretePMF(out)


def hockey_stick(P: DiscretePMF, Q: DiscretePMF, eps: float) -> float:
    """Tight delta at privacy level eps: sum_t max(0, P(t) - e^eps Q(t))."""
    if P.support_size != Q.support_size:
        raise ValueError(
            f"support mismatch: {P.support_size} vs {Q.support_size}"
        )
    return float(np.maximum(0.0, P.probs - math.exp(eps) * Q.probs).sum())


def _all_sum_laws(n: int, lam: float) -> list[np.ndarray]:
    q = lam / (2.0 * n)
    zeros_parts = [binom.pmf(np.arange(n - k + 1), n - k, q) for k in range(n + 1)]
    ones_parts = [binom.pmf(np.arange(k + 1), k, 1.0 - q) for k in range(n + 1)]
    return [np.convolve(ones_parts[k], zeros_parts[k]) for k in range(n + 1)]


def verify_shuffled_dp(
    n: int, lam: float, budget: PrivacyBudget, *, max_n: int = 2000
) -> DPReport:
    """Exact shuffled-model DP check of the bit-sum protocol at (n, lambda).

    The released distribution depends on a dataset only through its number
    of ones k, and neighboring datasets differ by one bit, so scanning the
    pairs (k, k+1) for k = 0..n-1 in both directions covers all neighbors.
    The worst pair is recorded rather than assumed to sit at the extremes.

    Raises:
        OracleGuardError: if n exceeds ``max_n`` (exact computation is
            O(n^3); the default guard keeps it tractable).
    """
    if n > max_n:
        raise OracleGuardError(
            f"n={n} exceeds the exact-computation guard max_n={max_n}"
        )
    laws = _all_sum_laws(n, lam)
    factor = math.exp(budget.eps)
    worst = -1.0
    worst_pair: dict = {}
    for k in range(n):
        P, Q = laws[k], laws[k + 1]
        up = float(np.maximum(0.0, Q - factor * P).sum())
        down = float(np.maximum(0.0, P - factor * Q).sum())
        for delta, direction in ((up, "add-one"), (down, "remove-one")):
            if delta > worst:
                worst = delta
                worst_pair = {"k": k, "k_neighbor": k + 1, "direction": direction}
    return DPReport(
        eps_tested=budget.eps,
        delta_measured=worst,
        delta_allowed=budget.delta,
        worst_pair=worst_pair,
        passed=worst <= budget.delta,
    )


def verify_randomizer_local_dp(n: int, lam: float, eps_target: float) -> DPReport:
    """Exact local-DP check of the binary randomizer, without the shuffler.

    The randomizer maps x to a two-point law with
    P[y = x] = 1 - lambda/2n and P[y = 1-x] = lambda/2n, so its worst
    likelihood ratio is 2n/lambda - 1 and it satisfies pure
    ln(2n/lambda - 1)-DP. ``delta_measured`` is the exact hockey-stick
    divergence at eps_target (0 iff the pure level is met); lambda = 0
    fails with an infinite level.
    """
    if not 0 <= lam <= n:
        raise ValueError(f"lambda must be in [0, n], got {lam}")
    allowed = 0.0
    pair = {"x": 0, "x_neighbor": 1, "direction": "either (symmetric)"}
    if lam == 0:
        return DPReport(
            eps_tested=eps_target,
            delta_measured=1.0,
            delta_allowed=allowed,
            worst_pair=pair,
            passed=False,
            eps_measured=math.inf,
        )
    flip = lam / (2.0 * n)
    law_one = DiscretePMF(np.array([flip, 1.0 - flip]))
    law_zero = DiscretePMF(np.array([1.0 - flip, flip]))
    delta = max(
        hockey_stick(law_one, law_zero, eps_target),
        hockey_stick(law_zero, law_one, eps_target),
    )
    eps_local = math.log(2.0 * n / lam - 1.0) if lam < 2.0 * n else 0.0
    return DPReport(
        eps_tested=eps_target,
        delta_measured=delta,
        delta_allowed=allowed,
        worst_pair=pair,
        passed=delta <= allowed,
        eps_measured=eps_local,
    )


def simulate_randomized_sums(
    k: int, n: int, lam: float, trials: int, rng, *, chunk: int = 200_000
) -> np.ndarray:
    """Sample sum_i R(x_i) on a dataset with k ones, ``trials`` times.

    Runs the actual protocol randomizer (not the analytic law), which is
    what makes the chi-square comparison below a real end-to-end check.
    """
    params = bitsum.BitSumParams(n=n, lam=lam) if lam < n else None
    gen = as_generator(rng)
    x = np.zeros(n, dtype=np.int8)
    x[:k] = 1
    sums = np.empty(trials, dtype=np.int64)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        block = np.broadcast_to(x, (m, n))
        if params is not None:
            ys = bitsum.randomize_bits(block, params, gen)
        else:
            # lambda = n: every user reports a fair coin.
            ys = gen.integers(0, 2, size=(m, n), dtype=np.int8)
        sums[done : done + m] = ys.sum(axis=1)
        done += m
    return sums


@dataclass(frozen=True)
class EquivalenceResult:
    """Chi-square comparison of sampled protocol sums against the exact law."""

    statistic: float
    pvalue: float
    dof: int
    bins: int


def _merge_bins(observed: np.ndarray, expected: np.ndarray, min_expected: float):
    obs_bins, exp_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_bins:
            obs_bins[-1] += o_acc
            exp_bins[-1] += e_acc
        else:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
    return np.asarray(obs_bins), np.asarray(exp_bins)


def empirical_equivalence_test(
    n: int,
    lam: float,
    k: int,
    trials: int,
    rng,
    *,
    min_expected: float = 5.0,
    pmf: Optional[DiscretePMF] = None,
) -> EquivalenceResult:
    """Goodness-of-fit of simulated protocol sums to the exact law.

    Bins with expected count below ``min_expected`` are merged with their
    neighbors before the chi-square statistic is formed. ``pmf`` can be
    overridden to run negative controls against a deliberately wrong law.
    A degenerate law (single bin after merging, e.g. lambda = 0) passes
    trivially with p-value 1.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    target = pmf if pmf is not None else c_lambda_pmf(k, n, lam)
    sums = simulate_randomized_sums(k, n, lam, trials, rng)
    observed = np.bincount(sums, minlength=target.support_size).astype(np.float64)
    if observed.size > target.support_size:
        raise ValueError("observed sums exceed the law's support")
    expected = target.probs * trials
    obs_b, exp_b = _merge_bins(observed, expected, min_expected)
    if len(obs_b) < 2:
        return EquivalenceResult(statistic=0.0, pvalue=1.0, dof=0, bins=len(obs_b))
    # Guard the ratio test against a wrong-law total that cannot match.
    exp_b = exp_b * (obs_b.sum() / exp_b.sum())
    statistic = float(((obs_b - exp_b) ** 2 / exp_b).sum())
    dof = len(obs_b) - 1
    pvalue = float(chi2.sf(statistic, dof))
    return EquivalenceResult(statistic=statistic, pvalue=pvalue, dof=dof, bins=len(obs_b))
