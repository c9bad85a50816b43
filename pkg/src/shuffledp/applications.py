"""Composed shuffled protocols: histogram and selection, plus a local-model
randomized-response baseline and the shuffled-to-local wrapper.

Both composed protocols run several bit-sum rounds through one shuffle,
with every message tagged by its round index. The histogram scales the
per-round budget by 2 (changing one user's value touches exactly two
one-hot coordinates); selection splits the budget across rounds with
advanced composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bitsum
from .core import (
    InfeasibleBudgetError,
    PrivacyBudget,
    Transcript,
    as_generator,
    compose,
    per_round_budget,
    run_protocol,
    shuffle,
)


@dataclass(frozen=True, eq=False)
class CategoricalDataset:
    """n users each holding a value in {0, ..., D-1}."""

    values: np.ndarray
    D: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("values must be a non-empty 1-d sequence")
        if self.D < 2:
            raise ValueError(f"domain size D must be >= 2, got {self.D}")
        if (values < 0).any() or (values >= self.D).any():
            raise ValueError("values must lie in [0, D)")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    def exact_histogram(self) -> np.ndarray:
        return np.bincount(self.values, minlength=self.D).astype(np.float64)


@dataclass(frozen=True, eq=False)
class BinaryMatrixDataset:
    """n users each holding a d-dimensional bit vector (one row apiece)."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError("rows must be a non-empty 2-d bit matrix")
        if not np.isin(rows, (0, 1)).all():
            raise ValueError("entries must be 0 or 1")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def column_sums(self) -> np.ndarray:
        return self.rows.sum(axis=0).astype(np.float64)


@dataclass(frozen=True)
class TaggedRoundsRandomizer:
    """Randomize an (n, rounds) bit matrix and tag each message with its round."""

    params: bitsum.BitSumParams
    rounds: int

    @property
    def messages_per_user(self) -> int:
        return self.rounds

    def __call__(self, bits_matrix, gen) -> np.ndarray:
        ys = bitsum.randomize_bits(bits_matrix, self.params, gen)
        n, rounds = ys.shape
        tags = np.broadcast_to(np.arange(rounds, dtype=np.int32), (n, rounds))
        return np.stack([tags, ys.astype(np.int32)], axis=-1)


@dataclass(frozen=True)
class PerRoundAnalyzer:
    """Per-round debiased estimates from shuffled (round, bit) messages."""

    params: bitsum.BitSumParams
    rounds: int

    def __call__(self, messages) -> np.ndarray:
        messages = np.asarray(messages)
        n, lam = self.params.n, self.params.lam
        if messages.ndim != 2 or messages.shape != (n * self.rounds, 2):
            raise ValueError(
                f"expected ({n * self.rounds}, 2) tagged messages, got {messages.shape}"
            )
        tags, bits = messages[:, 0], messages[:, 1]
        counts = np.bincount(tags, minlength=self.rounds)
        if counts.size != self.rounds or (counts != n).any():
            raise ValueError("each round must contribute exactly n messages")
        sums = np.bincount(tags, weights=bits, minlength=self.rounds)
        return n / (n - lam) * (sums - lam / 2.0)


def _one_hot(values: np.ndarray, D: int) -> np.ndarray:
    out = np.zeros((values.size, D), dtype=np.int8)
    out[np.arange(values.size), values] = 1
    return out


def histogram_protocol(
    data: CategoricalDataset, budget: PrivacyBudget, rng
) -> np.ndarray:
    """Estimate all D bucket counts under ``budget``.

    One-hot encodes each user's value and runs D bit-sum rounds through a
    single shuffle. A neighboring dataset changes at most two one-hot
    coordinates, so each round runs at (eps/2, delta/2) and the whole
    release meets (eps, delta). Estimates are clamped to [0, n] since they
    are reported as counts.
    """
    n, D = data.n, data.D
    round_budget = PrivacyBudget(budget.eps / 2.0, budget.delta / 2.0)
    params = bitsum.params_for_budget(n, round_budget)
    randomizer = TaggedRoundsRandomizer(params=params, rounds=D)
    analyzer = PerRoundAnalyzer(params=params, rounds=D)
    estimates, _ = run_protocol(randomizer, analyzer, _one_hot(data.values, D), rng)
    return np.clip(estimates, 0.0, float(n))


def selection_protocol(data: BinaryMatrixDataset, budget: PrivacyBudget, rng) -> int:
    """Pick a column whose sum is approximately largest, under ``budget``.

    Runs d bit-sum rounds (one per column) through a single shuffle, with
    the per-round budget from advanced composition split evenly across
    rounds. Returns the argmax of the raw per-column estimates; ties break
    to the lowest index.
    """
    n, d = data.n, data.d
    eps0, delta0, delta_prime = per_round_budget(budget, d)
    try:
        params = bitsum.params_for_budget(n, PrivacyBudget(eps0, delta0))
    except InfeasibleBudgetError as exc:
        raise InfeasibleBudgetError(
            f"per-round budget ({eps0:.6g}, {delta0:.6g}) infeasible at n={n}: {exc}"
        ) from None
    realized = compose(eps0, delta0, d, delta_prime)
    if realized.eps > budget.eps * (1 + 1e-9) or realized.delta > budget.delta * (1 + 1e-9):
        raise RuntimeError(
            "per-round budget fails its own composition re-check; "
            f"got ({realized.eps:.6g}, {realized.delta:.6g})"
        )
    randomizer = TaggedRoundsRandomizer(params=params, rounds=d)
    analyzer = PerRoundAnalyzer(params=params, rounds=d)
    estimates, _ = run_protocol(randomizer, analyzer, data.rows, rng)
    return int(np.argmax(estimates))


def check_selection(data: BinaryMatrixDataset, j: int) -> bool:
    """True iff column j's sum is within n/10 of the best column's sum."""
    sums = data.column_sums()
    if not 0 <= j < data.d:
        raise ValueError(f"column index {j} out of range [0, {data.d})")
    return bool(sums[j] >= sums.max() - data.n / 10.0)


def check_histogram(data: CategoricalDataset, v) -> bool:
    """True iff every bucket estimate is within n/10 of its true count."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (data.D,):
        raise ValueError(f"expected {data.D} bucket estimates, got shape {v.shape}")
    return bool(np.abs(v - data.exact_histogram()).max() <= data.n / 10.0)


def local_baseline_bitsum(data, eps: float, rng) -> float:
    """Classical eps-LDP randomized response over bits, debiased.

    Each user reports their true bit with probability e^eps/(e^eps + 1)
    and the opposite bit otherwise (per-user likelihood ratio exactly
    e^eps). Used as the no-shuffler comparison point.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    bits = np.asarray(getattr(data, "bits", data), dtype=np.int8)
    gen = as_generator(rng)
    flip_p = 1.0 / (math.exp(eps) + 1.0)
    flips = gen.random(bits.shape) < flip_p
    ys = np.where(flips, 1 - bits, bits)
    n = bits.size
    return (float(ys.sum()) - n * flip_p) / (1.0 - 2.0 * flip_p)


@dataclass(frozen=True)
class LocalProtocol:
    """A one-message shuffled protocol repackaged for the local model.

    The randomizer runs unchanged on each user; the shuffle moves inside
    the analyzer, so the output distribution (and, under a shared random
    source, the exact output) matches the original shuffled protocol.
    """

    randomizer: object
    analyzer: object

    def run(self, dataset, rng) -> float:
        values = getattr(dataset, "bits", None)
        if values is None:
            values = getattr(dataset, "values", dataset)
        gen = as_generator(rng)
        reports = np.asarray(self.randomizer(np.asarray(values), gen))
        if reports.ndim != 1:
            raise ValueError("one-message protocol produced multi-message reports")
        return self.analyzer(shuffle(reports, gen))


def shuffled_to_local(randomizer, analyzer) -> LocalProtocol:
    """Wrap a one-message shuffled protocol as a local-model protocol.

    Only defined for randomizers that emit a single message per user; the
    wrapper refuses multi-message randomizers.
    """
    m = getattr(randomizer, "messages_per_user", 1)
    if m != 1:
        raise ValueError(
            f"shuffled-to-local wrapper requires a one-message randomizer, got m={m}"
        )
    return LocalProtocol(randomizer=randomizer, analyzer=analyzer)
