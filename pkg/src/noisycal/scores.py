"""Non-conformity scores (APS family) and thresholded prediction sets.

A probability row is a length-K vector summing to 1.  The APS score of label
k is the cumulative sum of the descending sorted probabilities down to and
including the rank of k; the randomized variant subtracts U * pi(x, k) with a
single uniform U shared by all labels of a row.  Ties between probabilities
are broken by ascending label index, so scores are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidProbability, InvalidSpec

__all__ = [
    "ScoreMatrix",
    "validate_probability_rows",
    "aps_scores",
    "one_minus_prob_scores",
    "prediction_set",
]

# A ProbabilityRow is a plain length-K float vector; validate_probability_rows
# is the ingestion contract for stacks of them.


@dataclass(frozen=True)
class ScoreMatrix:
    """An n x K matrix of scores in [0, 1] plus the randomization provenance."""

    scores: NDArray[np.float64]
    randomized: bool
    seed: int

    def __post_init__(self) -> None:
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise InvalidSpec(f"scores must be 2-d, got shape {s.shape}")
        if s.size and (s.min() < -1e-9 or s.max() > 1.0 + 1e-9):
            raise InvalidSpec("scores must lie in [0, 1]")
        s = np.clip(s, 0.0, 1.0)
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def k(self) -> int:
        return self.scores.shape[1]


def validate_probability_rows(probs: NDArray[np.float64]) -> NDArray[np.float64]:
    """Validate and renormalize an n x K stack of probability rows.

    Rows whose sum deviates from 1 by at most 1e-6 are renormalized; larger
    deviations or negative entries raise InvalidProbability.
    """
    p = np.array(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] < 1:
        raise InvalidProbability(f"expected an n x K matrix, got shape {p.shape}")
    if np.any(~np.isfinite(p)):
        raise InvalidProbability("probability entries must be finite")
    if p.min(initial=0.0) < -1e-9:
        raise InvalidProbability("probability entries must be nonnegative")
    p = np.clip(p, 0.0, None)
    sums = p.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-6
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InvalidProbability(
            f"row {i} sums to {sums[i]:.8f}; deviation from 1 exceeds 1e-6"
        )
    return p / sums[:, None]


def aps_scores(
    probs: NDArray[np.float64],
    randomized: bool = False,
    seed: int = 0,
    jitter: bool = False,
) -> ScoreMatrix:
    """Generalized inverse-quantile (APS) scores for each row and label.

    Parameters
    ----------
    probs : ndarray
        n x K probability rows (validated and renormalized on ingest).
    randomized : bool
        Subtract U * probs with one uniform U per row, shared across labels.
    seed : int
        Seed for the randomization (and jitter) draws; the deterministic
        variant consumes no randomness.
    jitter : bool
        Add a uniform perturbation on [0, 1e-8] per entry so that scores are
        almost surely distinct.  Off by default.

    Returns
    -------
    ScoreMatrix
        Scores in [0, 1]; s(x, k) is the cumulative sum of the descending
        sorted probabilities down to the rank of k.
    """
    p = validate_probability_rows(probs)
    n, k = p.shape
    # argsort of -p with a stable sort ranks ties by ascending label index
    order = np.argsort(-p, axis=1, kind="stable")
    csum = np.cumsum(np.take_along_axis(p, order, axis=1), axis=1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(k), (n, k)), axis=1)
    s = np.take_along_axis(csum, ranks, axis=1)
    if randomized or jitter:
        rng = np.random.default_rng(seed)
        if randomized:
            s = s - rng.random(n)[:, None] * p
        if jitter:
            s = s + rng.random((n, k)) * 1e-8
    return ScoreMatrix(scores=np.clip(s, 0.0, 1.0), randomized=randomized, seed=seed)


def one_minus_prob_scores(probs: NDArray[np.float64]) -> ScoreMatrix:
    """The plain 1 - pi(x, k) score, included as a simple alternative."""
    p = validate_probability_rows(probs)
    return ScoreMatrix(scores=1.0 - p, randomized=False, seed=0)


def prediction_set(score_row: NDArray[np.float64], tau: float) -> NDArray[np.int64]:
    """Labels whose score is at most tau (0-based, ascending).

    Monotone in tau; tau = 1 returns every label because scores live in
    [0, 1].  The empty set is a legitimate output.
    """
    if not 0.0 <= tau <= 1.0:
        raise InvalidSpec(f"tau must lie in [0, 1], got {tau}")
    row = np.asarray(score_row, dtype=np.float64)
    return np.flatnonzero(row <= tau).astype(np.int64)
