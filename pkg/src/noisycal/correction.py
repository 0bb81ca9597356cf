"""Calibration correction factors delta(n) and related diagnostics.

Three routes produce a correction:

* ``c_of_n``: Monte-Carlo estimate of c(n) = E[max_i (i/n - U_(i))], the
  expected one-sided discrepancy of uniform order statistics, bounded above
  by sqrt(pi / (2 n)).
* ``delta_fs``: finite-sample bound c(n) (beta_0 + mean_k beta_k)
  + B(K, n, beta)/sqrt(n), minimized exactly over beta by solving two linear
  programs (one per branch of the min inside B).
* ``delta_asy``: asymptotic route; estimates the covariance of the limiting
  Gaussian process on a grid, simulates its absolute supremum, Richardson-
  extrapolates across a ladder of grid resolutions, and rescales by
  1/sqrt(n).

``delta_star_star_bound`` and ``upper_bound_diagnostics`` compute the purely
diagnostic quantities (the bound on the expected absolute supremum of the
centered process, d(n), phi(n), and the inflation-floor threshold).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgWarning, cho_factor, cho_solve, lu_factor, lu_solve
from scipy.optimize import linprog

from .empirical import CalibrationSet
from .errors import (
    CholeskyFailure,
    EmptyClass,
    InvalidSpec,
    LadderMismatch,
    SingularM,
    SolverFailure,
)
from .noise_model import (
    ContaminationSpec,
    Family,
    TransitionMatrix,
    closed_form_inverse,
    two_level_constants,
)

__all__ = [
    "CorrectionMethod",
    "BetaVector",
    "CnEstimate",
    "CorrectionReport",
    "GridCovariance",
    "c_of_n",
    "cn_envelope",
    "omega_matrix",
    "b_term",
    "delta_fs",
    "delta_fs_special",
    "estimate_covariance",
    "simulate_gbb_sup",
    "richardson",
    "delta_asy",
    "delta_star_star_bound",
    "upper_bound_diagnostics",
]


class CorrectionMethod(str, Enum):
    FINITE_SAMPLE = "finite_sample"
    ASYMPTOTIC = "asymptotic"
    CN_ONLY = "cn_only"


@dataclass(frozen=True)
class BetaVector:
    """The K+1 coefficients parameterizing the decomposition W = Wbar + Omega."""

    beta0: float
    betas: NDArray[np.float64]

    def __post_init__(self) -> None:
        b = np.array(self.betas, dtype=np.float64)
        if b.ndim != 1:
            raise InvalidSpec("betas must be a vector")
        if not (np.isfinite(self.beta0) and np.all(np.isfinite(b))):
            raise InvalidSpec("beta entries must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)


class CnEstimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class CorrectionReport:
    """A correction value plus its provenance.

    ``value`` is delta(n) itself.  For the finite-sample route, ``beta_star``
    and ``branch`` record the attaining coefficients and which branch of the
    bound was active; for the asymptotic route, ``mc_diagnostics`` records the
    grid ladder, the per-level Monte-Carlo estimates with standard errors,
    the extrapolated (unscaled) supremum, and the covariance condition
    number.  ``condition_number`` optionally carries the transition-matrix
    conditioning for audit.
    """

    method: CorrectionMethod
    value: float
    beta_star: BetaVector | None = None
    branch: str | None = None
    mc_diagnostics: dict | None = None
    condition_number: float | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or self.value < 0.0:
            raise InvalidSpec(f"correction value must be finite and >= 0, got {self.value}")

    def to_dict(self) -> dict:
        beta = None
        if self.beta_star is not None:
            beta = {
                "beta0": float(self.beta_star.beta0),
                "betas": [float(x) for x in self.beta_star.betas],
            }
        return {
            "method": self.method.value,
            "value": float(self.value),
            "beta_star": beta,
            "branch": self.branch,
            "mc_diagnostics": _jsonable(self.mc_diagnostics),
            "condition_number": None
            if self.condition_number is None
            else float(self.condition_number),
        }


def _jsonable(obj):
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


@dataclass(frozen=True)
class GridCovariance:
    """Estimated process covariance on a grid of thresholds."""

    grid: NDArray[np.float64]
    sigma: NDArray[np.float64]

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=np.float64)
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.shape != (g.shape[0], g.shape[0]):
            raise InvalidSpec("sigma must be N x N for an N-point grid")
        if np.max(np.abs(s - s.T), initial=0.0) > 1e-12:
            raise InvalidSpec("sigma must be symmetric within 1e-12")
        for arr in (g, s):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "sigma", s)


def _as_w(w) -> NDArray[np.float64]:
    if isinstance(w, TransitionMatrix):
        return w.W
    return np.asarray(w, dtype=np.float64)


# ---------------------------------------------------------------------------
# c(n)
# ---------------------------------------------------------------------------


def cn_envelope(n: int) -> float:
    """Analytic envelope sqrt(pi / (2 n)) >= c(n), a zero-cost substitute."""
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    return math.sqrt(math.pi / (2.0 * n))


@lru_cache(maxsize=None)
def _c_of_n_cached(n: int, m: int, seed: int) -> CnEstimate:
    rng = np.random.default_rng(seed)
    ratio = np.arange(1, n + 1) / n
    # order statistics of n uniforms via normalized cumulative sums of n+1
    # standard exponentials (no sorting needed)
    batch = max(1, int(10_000_000 // (n + 1)))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < m:
        b = min(batch, m - done)
        e = rng.standard_exponential((b, n + 1))
        np.cumsum(e, axis=1, out=e)
        u = e[:, :n] / e[:, n:]
        stat = np.max(ratio - u, axis=1)
        total += float(stat.sum())
        total_sq += float((stat * stat).sum())
        done += b
    mean = total / m
    var = max((total_sq - m * mean * mean) / (m - 1), 0.0) if m > 1 else 0.0
    return CnEstimate(value=mean, se=math.sqrt(var / m))


def c_of_n(n: int, m: int = 100_000, seed: int = 0) -> CnEstimate:
    """Monte-Carlo estimate of c(n) = E[max_i (i/n - U_(i))] with its SE.

    Deterministic and cached per (n, m, seed); estimates for repeated calls
    with the same arguments are free.
    """
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    if m < 1000:
        raise InvalidSpec("m must be >= 1000")
    return _c_of_n_cached(int(n), int(m), int(seed))


# ---------------------------------------------------------------------------
# finite-sample bound
# ---------------------------------------------------------------------------


def omega_matrix(w, beta: BetaVector) -> NDArray[np.float64]:
    """Omega = W - Wbar with Wbar[k, l] = beta0 * 1[k = l] + beta_k / K."""
    w = _as_w(w)
    k = w.shape[0]
    if beta.betas.shape[0] != k:
        raise InvalidSpec(f"beta has {beta.betas.shape[0]} entries, expected {k}")
    return w - beta.beta0 * np.eye(k) - beta.betas[:, None] / k


def b_term(k: int, n: int, beta: BetaVector, w) -> tuple[float, str]:
    """The deviation term B(K, n, beta) and which branch attained it.

    B = 2 min{ max_l sum_k |Omega[k, l]| * sqrt(log(K n + 1)),
               24 max|Omega| (2 log K + 1)/(2 log K - 1) sqrt(2 K log K) }.

    The chaining branch needs 2 log K > 1; for K = 1 it is undefined and the
    Massart branch is used alone.
    """
    if k < 1 or n < 1:
        raise InvalidSpec("k and n must be >= 1")
    omega = omega_matrix(w, beta)
    abs_omega = np.abs(omega)
    massart = float(abs_omega.sum(axis=0).max()) * math.sqrt(math.log(k * n + 1.0))
    if k >= 2:
        log_k = math.log(k)
        chaining = (
            24.0
            * float(abs_omega.max())
            * ((2.0 * log_k + 1.0) / (2.0 * log_k - 1.0))
            * math.sqrt(2.0 * k * log_k)
        )
    else:
        chaining = math.inf
    if massart <= chaining:
        return 2.0 * massart, "massart"
    return 2.0 * chaining, "chaining"


def _solve_branch_lp(
    k: int,
    w: NDArray[np.float64],
    lin_beta0: float,
    lin_betak: float,
    z_coef: float,
    per_column: bool,
    abs_objective: bool,
) -> BetaVector:
    """Exact LP for one branch of the piecewise-linear bound.

    Variables: beta0, beta_1..K, [u0, u_1..K if abs_objective],
    [A_kl if per_column], z.  The Omega entries are affine in beta, so
    |Omega| and the column-sum / entrywise max reduce to linear constraints.
    """
    nb = 1 + k
    nu = (1 + k) if abs_objective else 0
    na = k * k if per_column else 0
    nvars = nb + nu + na + 1
    i_u0 = nb
    i_a = nb + nu
    i_z = nvars - 1

    rows: list[NDArray[np.float64]] = []
    rhs: list[float] = []

    def omega_row(kk: int, ll: int, sign: float, aux_index: int) -> None:
        # encode sign * Omega[kk, ll] <= aux where
        # Omega[kk, ll] = W[kk, ll] - beta0 * 1[kk = ll] - beta_kk / K
        row = np.zeros(nvars)
        if kk == ll:
            row[0] = -sign
        row[1 + kk] = -sign / k
        row[aux_index] = -1.0
        rows.append(row)
        rhs.append(-sign * w[kk, ll])

    for kk in range(k):
        for ll in range(k):
            aux = (i_a + kk * k + ll) if per_column else i_z
            omega_row(kk, ll, +1.0, aux)
            omega_row(kk, ll, -1.0, aux)
    if per_column:
        for ll in range(k):
            row = np.zeros(nvars)
            for kk in range(k):
                row[i_a + kk * k + ll] = 1.0
            row[i_z] = -1.0
            rows.append(row)
            rhs.append(0.0)
    if abs_objective:
        for j in range(1 + k):
            for sign in (+1.0, -1.0):
                row = np.zeros(nvars)
                row[j] = sign
                row[i_u0 + j] = -1.0
                rows.append(row)
                rhs.append(0.0)

    cost = np.zeros(nvars)
    if abs_objective:
        cost[i_u0] = lin_beta0
        cost[i_u0 + 1 : i_u0 + 1 + k] = lin_betak
    else:
        cost[0] = lin_beta0
        cost[1 : 1 + k] = lin_betak
    cost[i_z] = z_coef

    res = linprog(
        cost,
        A_ub=np.array(rows),
        b_ub=np.array(rhs),
        bounds=(None, None),
        method="highs",
    )
    if res.status != 0 or res.x is None:
        raise SolverFailure(f"LP did not reach an optimum: {res.message}")
    return BetaVector(beta0=float(res.x[0]), betas=res.x[1 : 1 + k].copy())


def _fs_objective(n: int, k: int, w, c_n: float, beta: BetaVector) -> tuple[float, str]:
    b, branch = b_term(k, n, beta, w)
    value = c_n * (beta.beta0 + float(np.mean(beta.betas))) + b / math.sqrt(n)
    return value, branch


def _branch_coefs(k: int, n: int) -> tuple[float, float | None]:
    """z-coefficients of the Massart and chaining subproblems (incl. 2/sqrt(n))."""
    massart = (2.0 / math.sqrt(n)) * math.sqrt(math.log(k * n + 1.0))
    if k >= 2:
        log_k = math.log(k)
        chaining = (
            (2.0 / math.sqrt(n))
            * 24.0
            * ((2.0 * log_k + 1.0) / (2.0 * log_k - 1.0))
            * math.sqrt(2.0 * k * log_k)
        )
    else:
        chaining = None
    return massart, chaining


def delta_fs(n: int, k: int, w, c_n: float) -> CorrectionReport:
    """Finite-sample correction, minimized exactly over beta.

    Solves the two convex piecewise-linear subproblems (one per branch of the
    min inside B) as linear programs, then reports the smaller full objective
    together with the attaining beta and branch.  The reported value equals
    the objective evaluated at ``beta_star``, which is the optimizer
    certificate.
    """
    w = _as_w(w)
    if w.shape != (k, k):
        raise InvalidSpec(f"W has shape {w.shape}, expected {(k, k)}")
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    if not (np.isfinite(c_n) and c_n > 0.0):
        raise InvalidSpec(f"c_n must be positive, got {c_n}")
    zc_massart, zc_chaining = _branch_coefs(k, n)
    candidates = [
        _solve_branch_lp(k, w, c_n, c_n / k, zc_massart, per_column=True, abs_objective=False)
    ]
    if zc_chaining is not None:
        candidates.append(
            _solve_branch_lp(
                k, w, c_n, c_n / k, zc_chaining, per_column=False, abs_objective=False
            )
        )
    best: tuple[float, str, BetaVector] | None = None
    for beta in candidates:
        value, branch = _fs_objective(n, k, w, c_n, beta)
        if best is None or value < best[0]:
            best = (value, branch, beta)
    value, branch, beta = best
    return CorrectionReport(
        method=CorrectionMethod.FINITE_SAMPLE,
        value=max(value, 0.0),
        beta_star=beta,
        branch=branch,
    )


def delta_fs_special(spec: ContaminationSpec, n: int, c_n: float) -> CorrectionReport:
    """Analytic candidate beta' for the parametric families, evaluated.

    For randomized response, beta'_0 = 1/(1-eps) and beta'_k = -eps/(1-eps)
    make Omega vanish, so the value is c(n) exactly.  For block RR,
    beta'_k = -b eps/(1-eps); for the two-level model, beta'_k = -p.  Used as
    the optimizer cross-check and as a fast simplified mode.
    """
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    if not (np.isfinite(c_n) and c_n > 0.0):
        raise InvalidSpec(f"c_n must be positive, got {c_n}")
    k, eps = spec.k, spec.eps
    if spec.family is Family.RANDOMIZED_RESPONSE:
        betas = np.full(k, -eps / (1.0 - eps))
    elif spec.family is Family.BLOCK_RR:
        betas = np.full(k, -spec.b * eps / (1.0 - eps))
    elif spec.family is Family.TWO_LEVEL_RR:
        betas = np.full(k, -two_level_constants(eps, spec.nu).p)
    else:
        raise InvalidSpec("delta_fs_special supports only the parametric families")
    beta = BetaVector(beta0=1.0 / (1.0 - eps), betas=betas)
    w = closed_form_inverse(spec).W
    value, branch = _fs_objective(n, k, w, c_n, beta)
    return CorrectionReport(
        method=CorrectionMethod.FINITE_SAMPLE,
        value=max(value, 0.0),
        beta_star=beta,
        branch=branch,
    )


# ---------------------------------------------------------------------------
# asymptotic route
# ---------------------------------------------------------------------------


def estimate_covariance(cal: CalibrationSet, w, grid) -> GridCovariance:
    """Plug-in covariance of the limiting process on a threshold grid.

    With f_t(Z_i) = sum_k W[k, Ytilde_i] 1{s(X_i, k) <= t}, the estimate is
    G(t1, t2) = E_n[f_t1 f_t2] - E_n[f_t1] E_n[f_t2].  Joint indicator mass
    is scattered onto the grid cell of each score pair and accumulated with a
    two-dimensional cumulative sum, which costs O(n K^2 + N^2) instead of
    evaluating every grid pair directly.
    """
    w = _as_w(w)
    n, k = cal.scores.shape
    if w.shape != (k, k):
        raise InvalidSpec(f"W has shape {w.shape}, expected {(k, k)}")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.shape[0] < 1:
        raise InvalidSpec("grid must be a nonempty vector")
    if np.any(np.diff(grid) < 0) or grid[0] < 0.0 or grid[-1] > 1.0:
        raise InvalidSpec("grid must be sorted within [0, 1]")
    counts = np.bincount(cal.noisy_labels, minlength=k)
    for label in range(k):
        if counts[label] == 0:
            raise EmptyClass(label)
    npts = grid.shape[0]

    # cell index of each score: first grid point >= s, so s <= t_j iff pos <= j
    pos = np.searchsorted(grid, cal.scores.ravel(), side="left").reshape(n, k)
    valid = pos < npts
    v = w[:, cal.noisy_labels].T  # v[i, j] = W[j, label_i]

    d1 = np.zeros(npts)
    np.add.at(d1, pos[valid], v[valid])
    e1 = np.cumsum(d1) / n

    pair_r = np.broadcast_to(pos[:, :, None], (n, k, k))
    pair_c = np.broadcast_to(pos[:, None, :], (n, k, k))
    pair_ok = valid[:, :, None] & valid[:, None, :]
    pair_v = v[:, :, None] * v[:, None, :]
    d2 = np.zeros((npts, npts))
    np.add.at(d2, (pair_r[pair_ok], pair_c[pair_ok]), pair_v[pair_ok])
    e2 = d2.cumsum(axis=0).cumsum(axis=1) / n

    g = e2 - np.outer(e1, e1)
    g = 0.5 * (g + g.T)
    return GridCovariance(grid=grid, sigma=g)


def simulate_gbb_sup(cov: GridCovariance, m: int, seed: int) -> tuple[float, float]:
    """Mean and SE of the absolute supremum of the Gaussian process.

    Factorizes sigma + lambda I (jitter ladder 1e-10 to 1e-6 relative to the
    mean diagonal) and averages max_i |xi_i| over m replicates.  The absolute
    supremum is the simulation target: the Brownian-bridge special case has
    E[sup |BB|] = sqrt(pi/2) log 2, the constant the estimator is validated
    against.  An all-zero covariance short-circuits to (0, 0).
    """
    if m < 1000:
        raise InvalidSpec("m must be >= 1000")
    sigma = cov.sigma
    npts = sigma.shape[0]
    if not sigma.any():
        return 0.0, 0.0
    mean_diag = float(np.trace(sigma)) / npts
    if mean_diag <= 0.0:
        raise CholeskyFailure("covariance trace is nonpositive")
    chol = None
    for mult in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            chol = np.linalg.cholesky(sigma + (mult * mean_diag) * np.eye(npts))
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise CholeskyFailure("Cholesky failed even at jitter 1e-6 * mean diagonal")
    rng = np.random.default_rng(seed)
    batch = max(1, int(5_000_000 // npts))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < m:
        b = min(batch, m - done)
        z = rng.standard_normal((b, npts))
        x = z @ chol.T
        stat = np.max(np.abs(x), axis=1)
        total += float(stat.sum())
        total_sq += float((stat * stat).sum())
        done += b
    mean = total / m
    var = max((total_sq - m * mean * mean) / (m - 1), 0.0) if m > 1 else 0.0
    return float(mean), float(math.sqrt(var / m))


def richardson(estimates, p_assumed: float = 0.5, order: int | None = None) -> float:
    """Richardson extrapolation on a halving ladder of step sizes.

    ``estimates`` is a sequence of (h, value) pairs whose steps halve.  One
    elimination pass with exponent p maps neighboring levels (A(h), A(h/2))
    to (2^p A(h/2) - A(h)) / (2^p - 1); successive passes use exponents
    p + 1/2, p + 1, ...  Order r applies r passes and returns the entry built
    from the finest levels.  The default order uses the whole ladder.
    """
    pts = sorted(((float(h), float(v)) for h, v in estimates), key=lambda e: -e[0])
    if not pts:
        raise InvalidSpec("estimates must be nonempty")
    if p_assumed <= 0.0:
        raise InvalidSpec("p_assumed must be positive")
    levels = len(pts)
    if order is None:
        order = levels - 1
    if not 0 <= order <= levels - 1:
        raise InvalidSpec(f"order must lie in [0, {levels - 1}], got {order}")
    for (h_coarse, _), (h_fine, _) in zip(pts, pts[1:]):
        if h_fine <= 0.0 or abs(h_coarse / h_fine - 2.0) > 1e-12:
            raise LadderMismatch(
                f"steps {h_coarse} and {h_fine} do not halve (ratio must be 2)"
            )
    col = [v for _, v in pts]
    for j in range(order):
        factor = 2.0 ** (p_assumed + 0.5 * j)
        col = [
            (factor * col[i + 1] - col[i]) / (factor - 1.0) for i in range(len(col) - 1)
        ]
    return float(col[-1])


def _condition_estimate(sigma: NDArray[np.float64]) -> float:
    """Iterative 2-norm condition estimate of the jittered covariance."""
    npts = sigma.shape[0]
    mean_diag = float(np.trace(sigma)) / npts
    if mean_diag <= 0.0:
        return math.inf
    factor = None
    for mult in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        a = sigma + (mult * mean_diag) * np.eye(npts)
        try:
            factor = cho_factor(a)
            break
        except np.linalg.LinAlgError:
            continue
    if factor is None:
        return math.inf
    v = 1.0 + np.linspace(0.0, 1.0, npts)
    v /= np.linalg.norm(v)
    for _ in range(60):
        v = a @ v
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return math.inf
        v /= norm
    lam_max = float(v @ (a @ v))
    u = np.ones(npts) / math.sqrt(npts)
    for _ in range(60):
        u = cho_solve(factor, u)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return math.inf
        u /= norm
    lam_min = float(u @ (a @ u))
    if lam_min <= 0.0:
        return math.inf
    return lam_max / lam_min


def delta_asy(
    cal: CalibrationSet,
    w,
    h_ladder=(1.0 / 400.0, 1.0 / 800.0, 1.0 / 1600.0),
    m: int = 100_000,
    seed: int = 0,
    order: int = 1,
    p_assumed: float = 0.5,
) -> CorrectionReport:
    """Asymptotic correction via Gaussian suprema plus Richardson.

    For each step h the unit interval is discretized at the 1/h + 1 points
    {0, h, 2h, ..., 1}; the covariance is estimated on that grid and the
    absolute supremum simulated with its own substream of the seed.  The
    ladder of estimates is extrapolated (default order 1 with exponent 1/2,
    since the grid bias of a Gaussian supremum is O(sqrt(h))) and scaled by
    1/sqrt(n).
    """
    hs = sorted((float(h) for h in h_ladder), reverse=True)
    if not hs:
        raise InvalidSpec("h_ladder must be nonempty")
    for h in hs:
        if h <= 0.0 or abs(round(1.0 / h) - 1.0 / h) > 1e-9:
            raise InvalidSpec(f"1/h must be a positive integer, got h={h}")
    level_seeds = np.random.SeedSequence(seed).generate_state(len(hs))
    levels = []
    finest_cov = None
    for h, level_seed in zip(hs, level_seeds):
        grid = np.linspace(0.0, 1.0, int(round(1.0 / h)) + 1)
        cov = estimate_covariance(cal, w, grid)
        estimate, se = simulate_gbb_sup(cov, m, int(level_seed))
        levels.append({"h": h, "estimate": estimate, "se": se})
        finest_cov = cov
    extrapolated = richardson(
        [(lv["h"], lv["estimate"]) for lv in levels], p_assumed, order=order
    )
    diagnostics = {
        "h_levels": hs,
        "M": int(m),
        "raw": levels,
        "extrapolated": extrapolated,
        "condition_number": _condition_estimate(finest_cov.sigma),
    }
    return CorrectionReport(
        method=CorrectionMethod.ASYMPTOTIC,
        value=max(extrapolated, 0.0) / math.sqrt(cal.n),
        mc_diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def delta_star_star_bound(n: int, k: int, w, c_n: float | None = None) -> float:
    """Bound on the expected absolute supremum of the centered process.

    Same two linear programs as :func:`delta_fs`, with absolute values on the
    beta coefficients and the analytic envelope sqrt(pi/(2 n)) as the linear
    weight.  The ``c_n`` argument exists for symmetry with delta_fs and is
    not used: the bound is only valid with the envelope.
    """
    w = _as_w(w)
    if w.shape != (k, k):
        raise InvalidSpec(f"W has shape {w.shape}, expected {(k, k)}")
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    scale = cn_envelope(n)
    zc_massart, zc_chaining = _branch_coefs(k, n)
    candidates = [
        _solve_branch_lp(k, w, scale, scale / k, zc_massart, per_column=True, abs_objective=True)
    ]
    if zc_chaining is not None:
        candidates.append(
            _solve_branch_lp(
                k, w, scale, scale / k, zc_chaining, per_column=False, abs_objective=True
            )
        )
    best = math.inf
    for beta in candidates:
        b, _ = b_term(k, n, beta, w)
        value = scale * (
            abs(beta.beta0) + float(np.mean(np.abs(beta.betas)))
        ) + b / math.sqrt(n)
        best = min(best, value)
    return float(max(best, 0.0))


def _as_t(t) -> NDArray[np.float64]:
    if isinstance(t, TransitionMatrix):
        return t.T
    return np.asarray(t, dtype=np.float64)


def upper_bound_diagnostics(
    n: int,
    k: int,
    t,
    rho,
    rho_tilde,
    delta_n: float,
    delta_ss_n: float,
    alpha: float = 0.1,
) -> dict:
    """The diagnostics d(n), phi(n) and the inflation-floor threshold.

    ``delta_ss_n`` is the value of :func:`delta_star_star_bound` at n.  With
    M[k, l] = T[k, l] rho[l] / rho_tilde[k] and V = M^-1,

        d(n)   = n^(1/4) * delta_ss_n,
        phi(n) = 3 delta_ss_n + 2/n + n^(-1/4)
                 + (max_k(rho[k]/rho_tilde[k] * sum_l |V[k, l]|) - 1)/(n + 1),
        threshold = -alpha + delta_n + sqrt(log(2 n)/(2 n)) + d(n).

    The threshold is the floor the true inflation curve must stay above for
    the two-sided coverage guarantee; alpha enters the formula even though
    the rest is model-only, so it is an explicit argument here.
    """
    t = _as_t(t)
    rho = np.asarray(rho, dtype=np.float64)
    rho_tilde = np.asarray(rho_tilde, dtype=np.float64)
    if t.shape != (k, k) or rho.shape != (k,) or rho_tilde.shape != (k,):
        raise InvalidSpec("t must be K x K and rho, rho_tilde length-K")
    if np.any(rho <= 0.0) or np.any(rho_tilde <= 0.0):
        raise InvalidSpec("rho and rho_tilde must be strictly positive")
    if abs(rho.sum() - 1.0) > 1e-6 or abs(rho_tilde.sum() - 1.0) > 1e-6:
        raise InvalidSpec("rho and rho_tilde must sum to 1")
    if n < 1 or not 0.0 < alpha < 1.0:
        raise InvalidSpec("need n >= 1 and alpha in (0, 1)")
    if delta_n < 0.0 or delta_ss_n < 0.0:
        raise InvalidSpec("delta_n and delta_ss_n must be nonnegative")
    mix = t * rho[None, :] / rho_tilde[:, None]
    norm_inf = float(np.max(np.abs(mix).sum(axis=1)))
    try:
        with warnings.catch_warnings():
            # exact singularity is reported through the pivot check below
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(mix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SingularM(str(exc)) from exc
    if np.min(np.abs(np.diag(lu))) <= 1e-12 * max(norm_inf, np.finfo(float).tiny):
        raise SingularM("mixing matrix M is numerically singular")
    v = lu_solve((lu, piv), np.eye(k))
    bracket = float(np.max(rho / rho_tilde * np.abs(v).sum(axis=1)))
    d_n = n**0.25 * delta_ss_n
    phi_n = 3.0 * delta_ss_n + 2.0 / n + n**-0.25 + (bracket - 1.0) / (n + 1.0)
    threshold = -alpha + delta_n + math.sqrt(math.log(2.0 * n) / (2.0 * n)) + d_n
    return {"d_n": d_n, "phi_n": phi_n, "assumption_a6_threshold": threshold}
