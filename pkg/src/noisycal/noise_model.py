"""Label-contamination models: construction, inversion, sampling, estimation.

A contamination model is a column-stochastic transition matrix ``T`` with
``T[k, l] = P(noisy label = k | true label = l)``.  Three parametric families
have closed-form inverses (uniform randomized response, block randomized
response, two-level randomized response); arbitrary matrices are supported
through the ``CUSTOM`` family.

Labels are 0-based everywhere inside the library; the file and CLI layers
translate from the 1-based convention used in data files.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import InvalidSpec, LengthMismatch, MissingClass, SingularTransition

__all__ = [
    "Family",
    "ContaminationSpec",
    "TransitionMatrix",
    "TwoLevelDerived",
    "two_level_constants",
    "build_transition",
    "closed_form_inverse",
    "transition_from_matrix",
    "estimate_transition",
    "sample_noisy_labels",
]


class Family(str, Enum):
    """Supported contamination families."""

    RANDOMIZED_RESPONSE = "rr"
    BLOCK_RR = "block_rr"
    TWO_LEVEL_RR = "two_level_rr"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ContaminationSpec:
    """Parameters identifying a contamination model.

    Parameters
    ----------
    family : Family
        Which parametric family (or CUSTOM for an explicit matrix).
    k : int
        Number of classes.
    eps : float
        Noise strength in [0, 1).
    nu : float
        Two-level deviation in [0, 1]; used by TWO_LEVEL_RR only.
    b : int, optional
        Number of blocks; used by BLOCK_RR only, must divide ``k``.
    custom_matrix : ndarray, optional
        Explicit column-stochastic matrix; used by CUSTOM only.  Columns must
        sum to 1 within 1e-12 with nonnegative entries; invalid matrices are
        rejected, never repaired.
    """

    family: Family
    k: int
    eps: float = 0.0
    nu: float = 0.0
    b: int | None = None
    custom_matrix: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if self.k < 1 or int(self.k) != self.k:
            raise InvalidSpec(f"k must be a positive integer, got {self.k}")
        if not 0.0 <= self.eps < 1.0:
            raise InvalidSpec(f"eps must lie in [0, 1), got {self.eps}")
        if family is Family.BLOCK_RR:
            if self.b is None or self.b < 1 or self.k % self.b != 0:
                raise InvalidSpec(
                    f"block count b={self.b} must be a positive divisor of k={self.k}"
                )
        if family is Family.TWO_LEVEL_RR:
            if self.k % 2 != 0:
                raise InvalidSpec(f"two-level model needs an even k, got {self.k}")
            if not 0.0 <= self.nu <= 1.0:
                raise InvalidSpec(f"nu must lie in [0, 1], got {self.nu}")
        if family is Family.CUSTOM:
            if self.custom_matrix is None:
                raise InvalidSpec("custom family requires custom_matrix")
            m = np.array(self.custom_matrix, dtype=np.float64)
            if m.shape != (self.k, self.k):
                raise InvalidSpec(
                    f"custom_matrix has shape {m.shape}, expected {(self.k, self.k)}"
                )
            if np.any(m < 0.0):
                raise InvalidSpec("custom_matrix entries must be nonnegative")
            colsums = m.sum(axis=0)
            if np.max(np.abs(colsums - 1.0)) > 1e-12:
                raise InvalidSpec(
                    "custom_matrix columns must sum to 1 within 1e-12; "
                    f"worst deviation {np.max(np.abs(colsums - 1.0)):.3e}"
                )
            m.setflags(write=False)
            object.__setattr__(self, "custom_matrix", m)
        elif self.custom_matrix is not None:
            raise InvalidSpec("custom_matrix is only valid with the custom family")


@dataclass(frozen=True)
class TransitionMatrix:
    """A validated transition matrix together with its inverse.

    Fields
    ------
    T : ndarray
        Column-stochastic K x K matrix, ``T[k, l] = P(noisy=k | true=l)``.
    W : ndarray
        Inverse of ``T``.
    """

    T: NDArray[np.float64]
    W: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.array(self.T, dtype=np.float64)
        w = np.array(self.W, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InvalidSpec(f"T must be square, got shape {t.shape}")
        if w.shape != t.shape:
            raise InvalidSpec(f"W shape {w.shape} does not match T shape {t.shape}")
        if np.any(t < 0.0):
            raise InvalidSpec("T entries must be nonnegative")
        colsums = t.sum(axis=0)
        if np.max(np.abs(colsums - 1.0)) > 1e-10:
            raise InvalidSpec(
                "T columns must sum to 1 within 1e-10; "
                f"worst deviation {np.max(np.abs(colsums - 1.0)):.3e}"
            )
        resid = np.max(np.abs(w @ t - np.eye(t.shape[0])))
        if resid > 1e-10:
            raise SingularTransition(
                f"inverse residual ||W T - I|| = {resid:.3e} exceeds 1e-10; "
                "T is too ill-conditioned to certify"
            )
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "T", t)
        object.__setattr__(self, "W", w)

    @property
    def k(self) -> int:
        return self.T.shape[0]

    @property
    def condition_number(self) -> float:
        """2-norm condition number of T (equal to that of W)."""
        return float(np.linalg.cond(self.T))


@dataclass(frozen=True)
class TwoLevelDerived:
    """Intermediate constants of the two-level closed-form inverse."""

    f: float
    g: float
    e: float
    p: float
    h: float


def two_level_constants(eps: float, nu: float) -> TwoLevelDerived:
    """Derived constants (f, g, e, p, h) of the two-level model.

    For eps in [0, 1) and nu in [0, 1] these satisfy h >= 0 and
    p >= eps/(1-eps) >= h, hence |h - p| <= 2*eps/(1-eps).
    """
    f = eps * (1.0 + nu)
    g = eps * (1.0 - nu)
    e = (eps * (1.0 + nu) - eps**2 * (1.0 - nu)) / (1.0 - eps + f / 2.0)
    p = (1.0 / (1.0 - eps)) * e / (1.0 - eps + e / 2.0)
    h = (
        (g / (1.0 - eps) ** 2)
        * (1.0 - f / (2.0 * (1.0 - eps + f / 2.0)))
        * (1.0 - e / (2.0 * (1.0 - eps + e / 2.0)))
    )
    return TwoLevelDerived(f=f, g=g, e=e, p=p, h=h)


def _family_matrix(spec: ContaminationSpec) -> NDArray[np.float64]:
    k, eps = spec.k, spec.eps
    if spec.family is Family.RANDOMIZED_RESPONSE:
        return (1.0 - eps) * np.eye(k) + (eps / k) * np.ones((k, k))
    if spec.family is Family.BLOCK_RR:
        m = k // spec.b
        block = np.kron(np.eye(spec.b), np.ones((m, m)))
        return (1.0 - eps) * np.eye(k) + (eps / m) * block
    if spec.family is Family.TWO_LEVEL_RR:
        half = k // 2
        ones = np.ones((half, half))
        diag = (1.0 - eps) * np.eye(half) + (eps / k) * (1.0 + spec.nu) * ones
        off = (eps / k) * (1.0 - spec.nu) * ones
        return np.block([[diag, off], [off, diag]])
    return np.array(spec.custom_matrix, dtype=np.float64)


def _numeric_inverse(t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Dense inverse by LU with partial pivoting.

    Raises SingularTransition when a pivot falls below 1e-12 * ||T||_inf.
    """
    norm_inf = float(np.max(np.abs(t).sum(axis=1)))
    try:
        with warnings.catch_warnings():
            # the pivot check below is the error path for singular input
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(t)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy rarely raises here
        raise SingularTransition(str(exc)) from exc
    if np.min(np.abs(np.diag(lu))) <= 1e-12 * max(norm_inf, np.finfo(float).tiny):
        raise SingularTransition(
            "LU pivot below 1e-12 * ||T||_inf; transition matrix is singular"
        )
    return lu_solve((lu, piv), np.eye(t.shape[0]))


def build_transition(spec: ContaminationSpec) -> TransitionMatrix:
    """Build T from a spec and invert it numerically.

    The inverse always comes from LU elimination here; use
    :func:`closed_form_inverse` for the analytic W of the parametric families.
    """
    t = _family_matrix(spec)
    return TransitionMatrix(T=t, W=_numeric_inverse(t))


def transition_from_matrix(t: NDArray[np.float64]) -> TransitionMatrix:
    """Wrap an explicit matrix, inverting it numerically."""
    t = np.array(t, dtype=np.float64)
    return TransitionMatrix(T=t, W=_numeric_inverse(t))


def closed_form_inverse(spec: ContaminationSpec) -> TransitionMatrix:
    """Build T and assemble W from the family's analytic inverse formula.

    Supported families: RANDOMIZED_RESPONSE, BLOCK_RR, TWO_LEVEL_RR.  For RR,
    W = I/(1-eps) - eps/(K(1-eps)) * J.  For block RR with m = K/b labels per
    block, W = I/(1-eps) - eps/(m(1-eps)) * B where B is the block-diagonal
    matrix of ones.  For the two-level model W is assembled from the (p, h)
    constants of :func:`two_level_constants`.
    """
    k, eps = spec.k, spec.eps
    a = 1.0 / (1.0 - eps)
    if spec.family is Family.RANDOMIZED_RESPONSE:
        w = a * np.eye(k) - (eps * a / k) * np.ones((k, k))
    elif spec.family is Family.BLOCK_RR:
        m = k // spec.b
        block = np.kron(np.eye(spec.b), np.ones((m, m)))
        w = a * np.eye(k) - (eps * a / m) * block
    elif spec.family is Family.TWO_LEVEL_RR:
        half = k // 2
        ones = np.ones((half, half))
        c = two_level_constants(eps, spec.nu)
        diag = a * np.eye(half) - (c.p / k) * ones
        off = -(c.h / k) * ones
        w = np.block([[diag, off], [off, diag]])
    else:
        raise InvalidSpec("closed_form_inverse supports only the parametric families")
    return TransitionMatrix(T=_family_matrix(spec), W=w)


def _check_labels(labels: NDArray[np.int64], k: int, name: str) -> NDArray[np.int64]:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise InvalidSpec(f"{name} must be one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() >= k):
        raise InvalidSpec(f"{name} entries must lie in [0, {k - 1}] (0-based labels)")
    return arr.astype(np.int64, copy=False)


def estimate_transition(
    true_labels: NDArray[np.int64],
    noisy_labels: NDArray[np.int64],
    k: int,
) -> TransitionMatrix:
    """Plain maximum-likelihood estimate of T from paired label vectors.

    Column l of the estimate is the empirical distribution of the noisy label
    among samples whose true label is l.  No smoothing is applied: a class
    that never appears among the true labels raises MissingClass rather than
    being imputed.
    """
    y = _check_labels(true_labels, k, "true_labels")
    yt = _check_labels(noisy_labels, k, "noisy_labels")
    if y.size != yt.size:
        raise LengthMismatch(f"label vectors differ in length: {y.size} vs {yt.size}")
    if y.size == 0:
        raise LengthMismatch("label vectors must be nonempty")
    counts = np.bincount(yt * k + y, minlength=k * k).reshape(k, k).astype(np.float64)
    col_totals = counts.sum(axis=0)
    for label in range(k):
        if col_totals[label] == 0:
            raise MissingClass(label)
    t = counts / col_totals
    return TransitionMatrix(T=t, W=_numeric_inverse(t))


def sample_noisy_labels(
    true_labels: NDArray[np.int64],
    tm: TransitionMatrix,
    seed: int,
) -> NDArray[np.int64]:
    """Draw one noisy label per true label from the columns of T.

    Each draw uses inverse-CDF sampling on a single uniform variate, so the
    output is deterministic given the seed, and T = I reproduces the input
    exactly (the uniform lies in [0, 1), so the first CDF step at 1 is never
    crossed).
    """
    k = tm.k
    y = _check_labels(true_labels, k, "true_labels")
    rng = np.random.default_rng(seed)
    u = rng.random(y.size)
    cdf = np.cumsum(tm.T[:, y], axis=0)
    out = np.minimum((cdf <= u).sum(axis=0), k - 1)
    return out.astype(np.int64)
