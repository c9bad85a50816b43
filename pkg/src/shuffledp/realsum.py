"""Bounded-real-sum protocol: randomized rounding into r bits per user,
then r parallel rounds of the bit-sum protocol through a single shuffle.

Messages carry their round index so per-round analysis (and per-round
privacy verification) stays possible; the analyzer itself only needs the
grand sum, so dropping the tags is harmless post-processing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bitsum
from .core import InfeasibleBudgetError, PrivacyBudget, as_generator, compose, per_round_budget


@dataclass(frozen=True)
class RealSumParams:
    """n users, lambda expected noise submitters per round, r rounds."""

    n: int
    lam: float
    r: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.lam < self.n:
            raise ValueError(f"lambda must be in [0, n), got {self.lam}")
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")

    def bit_params(self) -> bitsum.BitSumParams:
        return bitsum.BitSumParams(n=self.n, lam=self.lam)


def encode_reals(xs, r: int, rng) -> np.ndarray:
    """Randomized-rounding encoder, vectorized over users.

    For x in [0, 1] let mu = ceil(x*r) and p = x*r - mu + 1. Coordinates
    below mu are 1, coordinate mu is Ber(p), the rest are 0, so the bit
    vector's mean is exactly x and only one coordinate is random.
    x = 0 yields mu = 0, which points at no coordinate: the output is
    deterministically all-zeros (the unique unbiased choice).
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    xs = np.asarray(xs, dtype=np.float64)
    if (xs < 0).any() or (xs > 1).any():
        raise ValueError("inputs must lie in [0, 1]")
    gen = as_generator(rng)
    scaled = xs * r
    mu = np.ceil(scaled)
    p = scaled - mu + 1.0
    cols = np.arange(1, r + 1)
    u = gen.random(xs.shape)
    bits = (cols < mu[..., None]) | (
        (cols == mu[..., None]) & (u[..., None] < p[..., None])
    )
    return bits.astype(np.int8)


def encode_real(x: float, r: int, rng) -> np.ndarray:
    """Encode a single value into its r-bit randomized rounding."""
    return encode_reals(np.asarray([x]), r, rng)[0]


def randomize_reals(xs, params: RealSumParams, rng) -> np.ndarray:
    """Encode each value, then randomize every bit with the (n, lambda) randomizer."""
    gen = as_generator(rng)
    encoded = encode_reals(xs, params.r, gen)
    return bitsum.randomize_bits(encoded, params.bit_params(), gen)


def randomize_real(x: float, params: RealSumParams, rng) -> np.ndarray:
    return randomize_reals(np.asarray([x]), params, rng)[0]


def tag_rounds(bits: np.ndarray) -> np.ndarray:
    """Attach round indices: (n, r) bits -> (n, r, 2) rows of (round, bit)."""
    n, r = bits.shape
    tags = np.broadcast_to(np.arange(r, dtype=np.int32), (n, r))
    return np.stack([tags, bits.astype(np.int32)], axis=-1)


def analyze_real(ys, params: RealSumParams) -> float:
    """Debiased estimate (1/r) * n/(n - lambda) * (sum of all bits - lambda*r/2).

    Accepts either an (n, r) bit matrix or the shuffled (n*r, 2) rows of
    (round tag, bit); in the latter case each round must contribute
    exactly n messages.
    """
    ys = np.asarray(ys)
    n, lam, r = params.n, params.lam, params.r
    # The two accepted shapes (n, r) and (n*r, 2) can never coincide.
    if ys.ndim == 2 and ys.shape == (n, r):
        total = float(ys.sum())
    elif ys.ndim == 2 and ys.shape == (n * r, 2):
        tags, bits = ys[:, 0], ys[:, 1]
        counts = np.bincount(tags, minlength=r)
        if counts.size != r or (counts != n).any():
            raise ValueError("each round must contribute exactly n messages")
        total = float(bits.sum())
    else:
        raise ValueError(
            f"expected an ({n}, {r}) matrix or ({n * r}, 2) tagged messages, "
            f"got shape {ys.shape}"
        )
    return (1.0 / r) * (n / (n - lam)) * (total - lam * r / 2.0)


@dataclass(frozen=True)
class RealSumRandomizer:
    params: RealSumParams

    @property
    def messages_per_user(self) -> int:
        return self.params.r

    def __call__(self, values, gen) -> np.ndarray:
        return tag_rounds(randomize_reals(values, self.params, gen))


@dataclass(frozen=True)
class RealSumAnalyzer:
    params: RealSumParams

    def __call__(self, ys) -> float:
        return analyze_real(ys, self.params)


def round_count(n: int, eps: float) -> int:
    """Messages per user: r = ceil(eps * sqrt(n)), at least 1, capped at n."""
    return min(max(1, math.ceil(eps * math.sqrt(n))), n)


def split_budget(eps: float, delta: float, r: int) -> tuple[float, float]:
    """Per-round (eps0, delta0) whose r-fold composition meets (eps, delta).

    eps0 = eps / sqrt(8 r ln(2/delta)) and delta0 = delta / 2r. Composing r
    rounds of (eps0, delta0) with slack delta' = delta/2 then stays within
    the target with room to spare.
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    return eps / math.sqrt(8.0 * r * math.log(2.0 / delta)), delta / (2.0 * r)


def realsum_params(n: int, budget: PrivacyBudget, r: int | None = None) -> RealSumParams:
    """Choose (lambda, r) so the r-round protocol meets ``budget``.

    r defaults to ceil(eps * sqrt(n)) but is tunable. With r = 1 the
    protocol is exactly the bit-sum protocol run on the rounded bits, so
    lambda comes straight from the single-round guarantee. For r > 1 the
    closed-form per-round split is tried first; when it asks for a smaller
    per-round eps than any lambda can certify at this n, fall back to the
    largest per-round eps that still composes within the budget (same
    delta split). Either way the composed guarantee is re-checked before
    returning.

    Raises:
        InfeasibleBudgetError: no lambda < n certifies the needed per-round
            budget at this n.
    """
    r = round_count(n, budget.eps) if r is None else r
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if r == 1:
        lam = bitsum.lambda_star(n, budget)
        if lam >= n:
            raise InfeasibleBudgetError("budget requires lambda = n (analyzer undefined)")
        return RealSumParams(n=n, lam=lam, r=r)

    eps0, delta0 = split_budget(budget.eps, budget.delta, r)
    try:
        return _params_via_split(n, budget, r, eps0, delta0, budget.delta / 2.0)
    except InfeasibleBudgetError:
        eps0, delta0, delta_prime = per_round_budget(budget, r)
        return _params_via_split(n, budget, r, eps0, delta0, delta_prime)


def _params_via_split(
    n: int,
    budget: PrivacyBudget,
    r: int,
    eps0: float,
    delta0: float,
    delta_prime: float,
) -> RealSumParams:
    lam = bitsum.lambda_star(n, PrivacyBudget(eps0, delta0))
    if lam >= n:
        raise InfeasibleBudgetError("budget requires lambda = n (analyzer undefined)")
    realized = compose(bitsum.epsilon_of_lambda(n, lam, delta0), delta0, r, delta_prime)
    if realized.eps > budget.eps * (1 + 1e-9) or realized.delta > budget.delta * (1 + 1e-9):
        raise InfeasibleBudgetError(
            f"composed guarantee ({realized.eps:.6g}, {realized.delta:.6g}) "
            f"exceeds the target ({budget.eps:.6g}, {budget.delta:.6g})"
        )
    return RealSumParams(n=n, lam=lam, r=r)


def realsum_accuracy_bound(params: RealSumParams, beta: float) -> float:
    """Error bound alpha with P[|estimate - true sum| >= alpha] < 2*beta.

        alpha = sqrt(2)/r * sqrt(n ln(2/beta))
                + n/(n - lambda) * sqrt(2 lambda/r * ln(2/beta))

    Requires lambda >= (16/9) ln(2/beta).
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    n, lam, r = params.n, params.lam, params.r
    if lam < (16.0 / 9.0) * math.log(2.0 / beta):
        raise ValueError(
            f"lambda={lam:.6g} below (16/9)*ln(2/beta)="
            f"{(16.0 / 9.0) * math.log(2.0 / beta):.6g}"
        )
    rounding = math.sqrt(2.0) / r * math.sqrt(n * math.log(2.0 / beta))
    noise = n / (n - lam) * math.sqrt(2.0 * lam / r * math.log(2.0 / beta))
    return rounding + noise
