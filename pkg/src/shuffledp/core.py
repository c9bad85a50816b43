"""Shuffled-model execution engine.

Datasets, the shuffler, the generic protocol runner, seedable randomness,
and (epsilon, delta) composition accounting. Everything here is pure given
an explicit random source, so independent trials can run in parallel on
distinct streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class InfeasibleBudgetError(ValueError):
    """Raised when no protocol parameter achieves the requested privacy."""


@dataclass(frozen=True)
class PrivacyBudget:
    """A target (eps, delta) differential-privacy guarantee."""

    eps: float
    delta: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class RandomSource:
    """A reproducible randomness handle: a 64-bit seed plus a stream id.

    Identical (seed, stream) pairs reproduce identical draws; distinct
    stream ids give statistically independent streams. Backed by the
    counter-based Philox generator, so allocating one stream per trial
    makes parallel simulation reproducible regardless of scheduling.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, stream: int) -> "RandomSource":
        """Same seed, different stream id."""
        return RandomSource(self.seed, stream)


RngLike = "RandomSource | np.random.Generator | int"


def as_generator(rng) -> np.random.Generator:
    """Coerce a RandomSource, Generator, or plain int seed to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RandomSource(int(rng)).generator()
    raise TypeError(f"cannot interpret {type(rng).__name__} as a random source")


@dataclass(frozen=True, eq=False)
class BitDataset:
    """n users each holding one bit."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int64)
        if bits.ndim != 1 or bits.size < 1:
            raise ValueError("bits must be a non-empty 1-d sequence")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("every entry must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return self.bits.size

    def total(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class RealDataset:
    """n users each holding a real value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("values must be a non-empty 1-d sequence")
        if (values < 0).any() or (values > 1).any():
            raise ValueError("every value must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True, eq=False)
class Transcript:
    """The multiset of messages released to the analyzer, post-shuffle.

    For one-message protocols this is a flat array of n bits; multi-message
    protocols release n*m rows of (round tag, bit).
    """

    messages: np.ndarray


def shuffle(messages, rng):
    """Return a uniformly random permutation of ``messages``.

    The multiset is preserved exactly. Arrays are permuted along the first
    axis; other sequences come back as lists.
    """
    gen = as_generator(rng)
    if isinstance(messages, np.ndarray):
        if messages.shape[0] <= 1:
            return messages.copy()
        return messages[gen.permutation(messages.shape[0])]
    items = list(messages)
    if len(items) <= 1:
        return items
    return [items[i] for i in gen.permutation(len(items))]


def run_protocol(randomizer, analyzer, dataset, rng):
    """Execute randomize -> shuffle -> analyze on a dataset.

    ``randomizer(values, gen)`` must return one row of messages per user
    (shape (n,) or (n, m) or (n, m, w) for tagged messages); the rows are
    concatenated, shuffled uniformly, and handed to ``analyzer``.

    Returns:
        (estimate, Transcript). Deterministic given (rng, dataset, params).

    Raises:
        ValueError: if randomizer and analyzer carry mismatched ``params``.
    """
    r_params = getattr(randomizer, "params", None)
    a_params = getattr(analyzer, "params", None)
    if r_params is not None and a_params is not None and r_params != a_params:
        raise ValueError(
            f"randomizer/analyzer parameter mismatch: {r_params} vs {a_params}"
        )
    values = getattr(dataset, "bits", None)
    if values is None:
        values = getattr(dataset, "values", None)
    if values is None:
        values = np.asarray(dataset)
    gen = as_generator(rng)
    per_user = np.asarray(randomizer(values, gen))
    if per_user.shape[0] != values.shape[0]:
        raise ValueError("randomizer must emit one message row per user")
    flat = per_user.reshape(-1, *per_user.shape[2:]) if per_user.ndim > 1 else per_user
    shuffled = shuffle(flat, gen)
    return analyzer(shuffled), Transcript(messages=shuffled)


def compose(eps0: float, delta0: float, T: int, delta_prime: float) -> PrivacyBudget:
    """Advanced composition of T mechanisms that are each (eps0, delta0)-DP.

    Returns the budget (eps0*(e^eps0 - 1)*T + eps0*sqrt(2*T*ln(1/delta')),
    delta' + T*delta0). Natural logarithms throughout.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not eps0 > 0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    if not delta_prime > 0:
        raise ValueError(f"delta_prime must be positive, got {delta_prime}")
    if delta0 < 0:
        raise ValueError(f"delta0 must be nonnegative, got {delta0}")
    eps = eps0 * (math.exp(eps0) - 1.0) * T + eps0 * math.sqrt(
        2.0 * T * math.log(1.0 / delta_prime)
    )
    return PrivacyBudget(eps=eps, delta=delta_prime + T * delta0)


def per_round_budget(target: PrivacyBudget, T: int) -> tuple[float, float, float]:
    """Split a target budget across T rounds of advanced composition.

    Convention: half of delta goes to the composition slack delta' and the
    other half is spread evenly over rounds (delta0 = delta / 2T). eps0 is
    found by binary search so that composing it back never exceeds the
    target (relative slack <= 1e-6).

    Returns:
        (eps0, delta0, delta_prime)
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    delta_prime = target.delta / 2.0
    delta0 = target.delta / (2.0 * T)

    def composed_eps(e: float) -> float:
        return compose(e, delta0, T, delta_prime).eps

    hi = target.eps
    if composed_eps(hi) <= target.eps:
        return hi, delta0, delta_prime
    lo = 0.0
    # composed_eps is strictly increasing in eps0 and exceeds eps0 itself,
    # so the bracket [0, target.eps] always contains the crossing.
    while hi - lo > 1e-6 * target.eps:
        mid = (lo + hi) / 2.0
        if composed_eps(mid) <= target.eps:
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        raise InfeasibleBudgetError(
            f"no positive per-round eps composes to eps <= {target.eps} over {T} rounds"
        )
    return lo, delta0, delta_prime
