"""Threshold calibrators with finite-sample risk control.

Three calibrators share one engine. Items are split in input order into
G equal batches; each batch contributes a loss curve over the threshold
grid; the returned threshold is the smallest grid value lambda with

    (sum_g L_g(lambda) + 1) / (G + 1) <= alpha

falling back to the REJECT_ALL sentinel when no grid value qualifies.

* crc_calibrate: every item is its own batch (G = n, I = 1).
* bb_crc_calibrate: each batch's curve is the mean loss of K items drawn
  uniformly with replacement from the batch.
* rbwa_crc_calibrate: each batch's curve is a weighted mean of its item
  losses under one exogenous simplex weight vector per batch.

Bootstrap resampling is the multinomial-count weight law, so BB equals
RBWA under that law with shared draws, exactly.

The grid is the set of distinct calibration scores with 0 prepended;
the empirical risk is a step function jumping only at item scores, so
scanning the grid realizes the infimum without approximation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AlphaOutOfRange,
    EmptyInput,
    IndivisibleBatching,
    InvalidEta,
    InvalidWeightLaw,
)
from .policy import CalibrationItem, Threshold, items_to_arrays

logger = logging.getLogger(__name__)

WEIGHT_LAW_KINDS = ("dirichlet", "multinomial_count", "uniform")


@dataclass(frozen=True)
class WeightLaw:
    """A distribution over the I-simplex, drawn once per batch."""

    kind: str
    eta: float | None = None
    count: int | None = None

    def __post_init__(self):
        if self.kind not in WEIGHT_LAW_KINDS:
            raise InvalidWeightLaw(f"unknown weight law {self.kind!r}")
        if self.kind == "dirichlet":
            if self.eta is None or not np.isfinite(self.eta) or self.eta <= 0:
                raise InvalidEta(f"dirichlet eta must be positive, got {self.eta!r}")
        if self.kind == "multinomial_count":
            if self.count is None or self.count < 1:
                raise InvalidWeightLaw(f"multinomial count K must be >= 1, got {self.count!r}")

    @classmethod
    def dirichlet(cls, eta: float) -> "WeightLaw":
        return cls(kind="dirichlet", eta=eta)

    @classmethod
    def multinomial_count(cls, count: int) -> "WeightLaw":
        return cls(kind="multinomial_count", count=count)

    @classmethod
    def uniform(cls) -> "WeightLaw":
        return cls(kind="uniform")

    def describe(self) -> str:
        if self.kind == "dirichlet":
            return f"{self.eta:g}"
        if self.kind == "multinomial_count":
            return f"multinomial:{self.count}"
        return "uniform"


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative weights summing to 1, tagged with their law.

    ``indices`` records the K uniform draws behind multinomial-count
    weights so a bootstrap run can be replayed exactly.
    """

    weights: np.ndarray
    law: WeightLaw
    indices: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError(f"weights must be a nonempty vector, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class BatchPartition:
    """Items split in input order into G batches of equal size I."""

    batches: tuple[tuple[CalibrationItem, ...], ...]
    G: int
    I: int


def _as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Normalize an rng argument; returns (generator, seed if known)."""
    if rng is None:
        return np.random.default_rng(), None
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng)), int(rng)
    if isinstance(rng, np.random.Generator):
        return rng, None
    raise TypeError(f"rng must be None, an int seed, or a numpy Generator, got {type(rng)!r}")


def partition_items(
    items: Sequence[CalibrationItem], batch_count: int, allow_truncate: bool = False
) -> BatchPartition:
    """Split items in input order into ``batch_count`` equal batches.

    When the count does not divide, raises IndivisibleBatching unless
    ``allow_truncate``, which drops the trailing remainder with a
    logged warning.
    """
    n = len(items)
    if n == 0:
        raise EmptyInput("cannot partition zero items")
    if batch_count < 1:
        raise IndivisibleBatching(f"batch count must be >= 1, got {batch_count}")
    if batch_count > n:
        raise IndivisibleBatching(f"batch count {batch_count} exceeds item count {n}")
    size = n // batch_count
    remainder = n % batch_count
    if remainder:
        if not allow_truncate:
            raise IndivisibleBatching(
                f"{batch_count} batches do not divide {n} items; "
                f"pass allow_truncate to drop the trailing {remainder}"
            )
        logger.warning("truncating %d trailing items to fit %d equal batches", remainder, batch_count)
        items = items[: batch_count * size]
    batches = tuple(
        tuple(items[g * size : (g + 1) * size]) for g in range(batch_count)
    )
    return BatchPartition(batches=batches, G=batch_count, I=size)


def sample_dirichlet(eta: float, size: int, rng) -> SimplexWeights:
    """Symmetric Dirichlet(eta 1) weights via normalized gamma variates.

    Coordinates have mean 1/I, variance (I-1)/(I^2 (kappa+1)) and
    pairwise covariance -1/(I^2 (kappa+1)) with kappa = I eta.
    """
    if not np.isfinite(eta) or eta <= 0:
        raise InvalidEta(f"eta must be positive, got {eta!r}")
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    gen, _ = _as_generator(rng)
    draws = gen.gamma(eta, 1.0, size=size)
    while draws.sum() == 0.0:  # astronomically rare underflow guard
        draws = gen.gamma(eta, 1.0, size=size)
    return SimplexWeights(weights=draws / draws.sum(), law=WeightLaw.dirichlet(eta))


def multinomial_count_weights(size: int, count: int, rng) -> SimplexWeights:
    """Normalized counts of K uniform index draws in {0, ..., I-1}.

    The drawn indices are recorded so a bootstrap run using the same
    stream can be replayed index-for-index.
    """
    law = WeightLaw.multinomial_count(count)
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    gen, _ = _as_generator(rng)
    idx = gen.integers(0, size, size=count)
    counts = np.bincount(idx, minlength=size)
    return SimplexWeights(weights=counts / float(count), law=law, indices=idx)


def uniform_weights(size: int) -> SimplexWeights:
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    return SimplexWeights(weights=np.full(size, 1.0 / size), law=WeightLaw.uniform())


def draw_weights(law: WeightLaw, size: int, rng) -> SimplexWeights:
    if law.kind == "dirichlet":
        return sample_dirichlet(law.eta, size, rng)
    if law.kind == "multinomial_count":
        return multinomial_count_weights(size, law.count, rng)
    return uniform_weights(size)


def lambda_grid(items: Sequence[CalibrationItem]) -> np.ndarray:
    """Distinct calibration scores with 0 prepended, sorted ascending."""
    q, _ = items_to_arrays(items)
    values = np.unique(q)
    if values.size == 0 or values[0] != 0.0:
        values = np.concatenate(([0.0], values))
    return values


def _batch_curve(q: np.ndarray, contrib: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Sum of ``contrib`` over items with q >= each grid value."""
    order = np.argsort(q, kind="stable")
    qs = q[order]
    suffix = np.concatenate((np.cumsum(contrib[order][::-1])[::-1], [0.0]))
    return suffix[np.searchsorted(qs, grid, side="left")]


def _scan_grid(
    curves: np.ndarray,
    batch_count: int,
    alpha: float,
    grid: np.ndarray,
    calibrator: str,
    seed: int | None,
) -> Threshold:
    """Smallest grid threshold satisfying the bias-corrected constraint."""
    lhs = (curves.sum(axis=0) + 1.0) / (batch_count + 1.0)
    feasible = np.flatnonzero(lhs <= alpha)
    if feasible.size == 0:
        return Threshold.reject_all(alpha=alpha, calibrator=calibrator, seed=seed)
    return Threshold(value=float(grid[feasible[0]]), alpha=alpha, calibrator=calibrator, seed=seed)


def _check_alpha(alpha: float) -> None:
    if not (np.isfinite(alpha) and 0.0 < alpha < 1.0):
        raise AlphaOutOfRange(f"alpha must be in (0, 1), got {alpha!r}")


def _calibrate_weighted(
    partition: BatchPartition,
    weight_rows: Sequence[np.ndarray],
    alpha: float,
    grid: np.ndarray,
    calibrator: str,
    seed: int | None,
) -> Threshold:
    curves = np.empty((partition.G, grid.size))
    for g, (batch, w) in enumerate(zip(partition.batches, weight_rows)):
        q, m = items_to_arrays(batch)
        curves[g] = _batch_curve(q, w * m, grid)
    return _scan_grid(curves, partition.G, alpha, grid, calibrator, seed)


def crc_calibrate(
    items: Sequence[CalibrationItem],
    alpha: float,
    grid: np.ndarray | None = None,
) -> Threshold:
    """Plain conformal risk control over single-item batches.

    Returns the smallest grid lambda with
    (sum_i L(Y_i, lambda) + 1) / (n + 1) <= alpha, REJECT_ALL if none.
    """
    _check_alpha(alpha)
    if len(items) == 0:
        raise EmptyInput("crc_calibrate needs at least one item")
    if grid is None:
        grid = lambda_grid(items)
    partition = partition_items(items, len(items))
    ones = [np.ones(1)] * partition.G
    return _calibrate_weighted(partition, ones, alpha, grid, "crc", None)


def bb_crc_calibrate(
    items: Sequence[CalibrationItem],
    batch_count: int,
    replicates: int,
    alpha: float,
    rng,
    allow_truncate: bool = False,
) -> Threshold:
    """Batched bootstrap calibration.

    Per batch, draws ``replicates`` items uniformly with replacement and
    averages their losses; deterministic given an integer seed. The
    draw is realized through multinomial-count weights so the weighted
    calibrator reproduces it exactly under a shared stream.
    """
    _check_alpha(alpha)
    if replicates < 1:
        raise InvalidWeightLaw(f"replicate count K must be >= 1, got {replicates}")
    gen, seed = _as_generator(rng)
    partition = partition_items(items, batch_count, allow_truncate)
    weight_rows = [
        multinomial_count_weights(partition.I, replicates, gen).weights
        for _ in range(partition.G)
    ]
    grid = lambda_grid(items)
    return _calibrate_weighted(partition, weight_rows, alpha, grid, "bb_crc", seed)


def rbwa_crc_calibrate(
    items: Sequence[CalibrationItem],
    batch_count: int,
    weight_law: WeightLaw,
    alpha: float,
    rng,
    allow_truncate: bool = False,
) -> Threshold:
    """Randomized batched weighted-average calibration.

    Draws one simplex weight vector per batch, independent of batch
    contents, and scans the grid over per-batch weighted losses.
    """
    _check_alpha(alpha)
    if not isinstance(weight_law, WeightLaw):
        raise InvalidWeightLaw(f"weight_law must be a WeightLaw, got {type(weight_law)!r}")
    gen, seed = _as_generator(rng)
    partition = partition_items(items, batch_count, allow_truncate)
    weight_rows = [
        draw_weights(weight_law, partition.I, gen).weights for _ in range(partition.G)
    ]
    grid = lambda_grid(items)
    return _calibrate_weighted(partition, weight_rows, alpha, grid, "rbwa_crc", seed)
