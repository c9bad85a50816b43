"""Single-message Boolean-sum protocol and its privacy-parameter calculus.

Each user reports their true bit with probability 1 - lambda/n and a fair
coin otherwise, so in expectation lambda users submit noise. The analyzer
debiases the shuffled sum. The functions below convert between lambda and
the (eps, delta) guarantee it buys, and bound the protocol's error.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InfeasibleBudgetError, PrivacyBudget, as_generator


@dataclass(frozen=True)
class BitSumParams:
    """Protocol configuration: n users, lambda expected noise submitters.

    lambda may be any real in [0, n); lambda = n is excluded because the
    analyzer's n/(n - lambda) debiasing factor would be undefined.
    """

    n: int
    lam: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.lam < self.n:
            raise ValueError(f"lambda must be in [0, n), got {self.lam} with n={self.n}")


def randomize_bits(bits, params: BitSumParams, rng) -> np.ndarray:
    """Vectorized local randomizer. ``bits`` may have any shape."""
    gen = as_generator(rng)
    bits = np.asarray(bits)
    p_noise = params.lam / params.n
    noisy = gen.random(bits.shape) < p_noise
    coins = gen.integers(0, 2, size=bits.shape, dtype=np.int8)
    return np.where(noisy, coins, bits.astype(np.int8))


def randomize_bit(x: int, params: BitSumParams, rng) -> int:
    """Randomize one user's bit: keep it w.p. 1 - lambda/n, else a fair coin."""
    if x not in (0, 1):
        raise ValueError(f"input bit must be 0 or 1, got {x}")
    return int(randomize_bits(np.asarray(x), params, rng))


def analyze_bits(ys, params: BitSumParams) -> float:
    """Debiased estimate n/(n - lambda) * (sum(ys) - lambda/2).

    Depends on the messages only through their sum, so it is invariant
    under shuffling. The estimate is intentionally not clamped to [0, n];
    it is unbiased and may be negative.
    """
    ys = np.asarray(ys)
    if ys.ndim != 1 or ys.shape[0] != params.n:
        raise ValueError(f"expected {params.n} messages, got shape {ys.shape}")
    n, lam = params.n, params.lam
    return n / (n - lam) * (float(ys.sum()) - lam / 2.0)


@dataclass(frozen=True)
class BitSumRandomizer:
    params: BitSumParams
    messages_per_user: int = 1

    def __call__(self, bits, gen) -> np.ndarray:
        return randomize_bits(bits, self.params, gen)


@dataclass(frozen=True)
class BitSumAnalyzer:
    params: BitSumParams

    def __call__(self, ys) -> float:
        return analyze_bits(ys, self.params)


def _require_valid_delta(delta: float):
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")


def epsilon_of_lambda(n: int, lam: float, delta: float) -> float:
    """The proven privacy level eps*(lambda) of the protocol at this lambda.

        eps*(lambda) = sqrt(32 ln(4/delta) / g) * (1 - g/n),
        g = lambda - sqrt(2 lambda ln(2/delta))

    Valid for lambda in [14 ln(4/delta), n]; below that floor the guarantee
    is not established and this function refuses to extrapolate.
    """
    _require_valid_delta(delta)
    floor = 14.0 * math.log(4.0 / delta)
    if lam < floor:
        raise ValueError(
            f"lambda={lam:.6g} is below the validity floor 14*ln(4/delta)={floor:.6g}"
        )
    if lam > n:
        raise ValueError(f"lambda={lam:.6g} exceeds n={n}")
    g = lam - math.sqrt(2.0 * lam * math.log(2.0 / delta))
    return math.sqrt(32.0 * math.log(4.0 / delta) / g) * (1.0 - g / n)


def lambda_closed_form(n: int, budget: PrivacyBudget) -> float:
    """Closed-form lambda sufficient for (eps, delta)-privacy.

        lambda = 64/eps^2 * ln(4/delta)            if eps >= sqrt(192 ln(4/delta) / n)
        lambda = n - eps n^{3/2} / sqrt(432 ln(4/delta))   otherwise

    Requires n >= 14 ln(4/delta) and sqrt(3456) ln(4/delta)/n < eps < 1;
    outside that range use lambda_star or relax the budget. At the branch
    crossover the large-eps branch is used.
    """
    eps, delta = budget.eps, budget.delta
    l4 = math.log(4.0 / delta)
    if n < 14.0 * l4:
        raise InfeasibleBudgetError(
            f"n={n} is below 14*ln(4/delta)={14.0 * l4:.6g}; use lambda_star or relax delta"
        )
    eps_lo = math.sqrt(3456.0) * l4 / n
    if not eps_lo < eps < 1.0:
        raise InfeasibleBudgetError(
            f"eps={eps:.6g} outside the closed form's range ({eps_lo:.6g}, 1); "
            "use lambda_star or relax the budget"
        )
    if eps >= math.sqrt(192.0 * l4 / n):
        return 64.0 / (eps * eps) * l4
    return n - eps * n**1.5 / math.sqrt(432.0 * l4)


def lambda_star(n: int, budget: PrivacyBudget, tol_factor: float = 1e-6) -> float:
    """Minimum lambda in [14 ln(4/delta), n] with eps*(lambda) <= budget.eps.

    Found by bisection to absolute tolerance ``tol_factor * n`` after a
    bracketing check (eps* is decreasing in lambda, but the bracket is
    verified rather than assumed). The result always satisfies
    eps*(result) <= eps; anything smaller by more than the tolerance does
    not.

    Raises:
        InfeasibleBudgetError: if even lambda = n cannot certify the budget
            at this n, or the validity floor exceeds n.
    """
    eps, delta = budget.eps, budget.delta
    floor = 14.0 * math.log(4.0 / delta)
    if floor > n:
        raise InfeasibleBudgetError(
            f"validity floor 14*ln(4/delta)={floor:.6g} exceeds n={n}"
        )
    if epsilon_of_lambda(n, n, delta) > eps:
        raise InfeasibleBudgetError(
            f"infeasible: even lambda = n = {n} only certifies "
            f"eps = {epsilon_of_lambda(n, n, delta):.6g} > {eps:.6g}"
        )
    if epsilon_of_lambda(n, floor, delta) <= eps:
        return floor
    lo, hi = floor, float(n)
    tol = tol_factor * n
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if epsilon_of_lambda(n, mid, delta) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def params_for_budget(n: int, budget: PrivacyBudget) -> BitSumParams:
    """Protocol parameters meeting ``budget`` with the least noise (lambda_star)."""
    lam = lambda_star(n, budget)
    if lam >= n:
        raise InfeasibleBudgetError(
            f"budget requires lambda = n = {n}, where the analyzer is undefined"
        )
    return BitSumParams(n=n, lam=lam)


def bitsum_accuracy_bound(n: int, lam: float, beta: float) -> float:
    """Error bound alpha with P[|estimate - true sum| > alpha] <= beta.

        alpha = sqrt(2 lambda ln(2/beta)) * n / (n - lambda)

    Requires n > lambda >= 2 ln(2/beta).
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    if not n > lam:
        raise ValueError(f"need n > lambda, got n={n}, lambda={lam}")
    if lam < 2.0 * math.log(2.0 / beta):
        raise ValueError(
            f"lambda={lam:.6g} below 2*ln(2/beta)={2.0 * math.log(2.0 / beta):.6g}"
        )
    return math.sqrt(2.0 * lam * math.log(2.0 / beta)) * n / (n - lam)
