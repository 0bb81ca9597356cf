"""Tests for the finite-sample and asymptotic correction factors."""

import json
import math

import numpy as np
import pytest

from noisycal import (
    BetaVector,
    CalibrationSet,
    CholeskyFailure,
    ContaminationSpec,
    CorrectionMethod,
    CorrectionReport,
    EmptyClass,
    Family,
    GridCovariance,
    InvalidSpec,
    LadderMismatch,
    SingularM,
    b_term,
    c_of_n,
    closed_form_inverse,
    cn_envelope,
    delta_asy,
    delta_fs,
    delta_fs_special,
    delta_star_star_bound,
    estimate_covariance,
    omega_matrix,
    richardson,
    simulate_gbb_sup,
    upper_bound_diagnostics,
)

from oracles import brute_b_term, brute_covariance


# ---------------------------------------------------------------------------
# c(n)
# ---------------------------------------------------------------------------


def test_c_of_n_n_equals_one_is_one_half():
    # max_i (i/n - U_(i)) with n = 1 is 1 - U, whose mean is 1/2
    est = c_of_n(1, 200_000, seed=3)
    assert abs(est.value - 0.5) <= 3.0 * est.se


def test_c_of_n_below_envelope():
    for n in (10, 100, 1000):
        est = c_of_n(n, 100_000, seed=0)
        assert est.value <= cn_envelope(n) + 3.0 * est.se


def test_c_of_n_decreases_with_n():
    assert c_of_n(1000, 100_000).value < c_of_n(100, 100_000).value


def test_c_of_n_deterministic():
    a = c_of_n(50, 20_000, seed=9)
    b = c_of_n(50, 20_000, seed=9)
    assert a.value == b.value and a.se == b.se


def test_cn_envelope_formula():
    assert cn_envelope(100) == math.sqrt(math.pi / 200.0)
    assert cn_envelope(1) == math.sqrt(math.pi / 2.0)


def test_c_of_n_rejects_bad_arguments():
    with pytest.raises(InvalidSpec):
        c_of_n(0, 10_000)
    with pytest.raises(InvalidSpec):
        c_of_n(10, 0)


# ---------------------------------------------------------------------------
# Omega and the deviation term B
# ---------------------------------------------------------------------------


def wbar(beta: BetaVector, k: int) -> np.ndarray:
    return beta.beta0 * np.eye(k) + beta.betas[:, None] / k


def test_omega_zero_when_w_matches_beta():
    k = 4
    # dyadic entries so Wbar reconstruction cancels exactly in floats
    beta = BetaVector(beta0=1.25, betas=np.array([-0.25, 0.5, 0.0, -0.5]))
    w = wbar(beta, k)
    assert np.all(omega_matrix(w, beta) == 0.0)
    b, branch = b_term(k, 100, beta, w)
    assert b == 0.0
    assert branch == "massart"


def test_b_term_matches_plain_formulas():
    rng = np.random.default_rng(12)
    for k in (2, 4, 7):
        w = rng.normal(size=(k, k))
        beta = BetaVector(beta0=rng.normal(), betas=rng.normal(size=k))
        got, _ = b_term(k, 50, beta, w)
        want, omega = brute_b_term(k, 50, beta.beta0, beta.betas, w)
        assert got == pytest.approx(want, abs=1e-12)
        assert np.allclose(omega_matrix(w, beta), omega, atol=1e-15)


def test_b_term_k_equals_one_uses_massart_alone():
    # the chaining constant is undefined at K = 1 (2 log K - 1 < 0)
    beta = BetaVector(beta0=0.0, betas=np.zeros(1))
    w = np.array([[0.7]])
    b, branch = b_term(1, 25, beta, w)
    assert branch == "massart"
    assert b == pytest.approx(2.0 * 0.7 * math.sqrt(math.log(26.0)), abs=1e-12)


def test_b_term_linear_in_omega():
    k = 3
    rng = np.random.default_rng(5)
    beta = BetaVector(beta0=rng.normal(), betas=rng.normal(size=k))
    w = rng.normal(size=(k, k))
    base = wbar(beta, k)
    w2 = base + 2.0 * (w - base)  # doubles Omega entrywise
    b1, _ = b_term(k, 80, beta, w)
    b2, _ = b_term(k, 80, beta, w2)
    assert b2 == pytest.approx(2.0 * b1, rel=1e-12)


def test_b_term_rejects_mismatched_beta():
    with pytest.raises(InvalidSpec):
        b_term(3, 10, BetaVector(beta0=1.0, betas=np.zeros(2)), np.eye(3))
    with pytest.raises(InvalidSpec):
        b_term(0, 10, BetaVector(beta0=1.0, betas=np.zeros(1)), np.eye(1))


# ---------------------------------------------------------------------------
# finite-sample correction
# ---------------------------------------------------------------------------


def test_delta_fs_randomized_response_attains_cn():
    # W for randomized response lies exactly on the Omega = 0 manifold, so
    # the optimum is c(n) with a vanishing deviation term
    cn = 0.06
    for eps in (0.0, 0.1, 0.2):
        spec = ContaminationSpec(family=Family.RANDOMIZED_RESPONSE, k=4, eps=eps)
        w = closed_form_inverse(spec).W
        rep = delta_fs(400, 4, w, cn)
        assert rep.value == pytest.approx(cn, abs=1e-6)
        b, _ = b_term(4, 400, rep.beta_star, w)
        assert b <= 1e-10
        assert rep.method is CorrectionMethod.FINITE_SAMPLE


def test_delta_fs_certificate_matches_reported_value():
    # reported value must equal the full objective at the returned beta
    cn = 0.05
    spec = ContaminationSpec(family=Family.BLOCK_RR, k=4, eps=0.2, b=2)
    w = closed_form_inverse(spec).W
    rep = delta_fs(900, 4, w, cn)
    b, branch = b_term(4, 900, rep.beta_star, w)
    objective = cn * (rep.beta_star.beta0 + float(np.mean(rep.beta_star.betas)))
    objective += b / math.sqrt(900.0)
    assert rep.value == pytest.approx(objective, abs=1e-9)
    assert rep.branch == branch


def test_delta_fs_never_above_analytic_candidate():
    cn = 0.04
    for spec in (
        ContaminationSpec(family=Family.BLOCK_RR, k=4, eps=0.1, b=2),
        ContaminationSpec(family=Family.TWO_LEVEL_RR, k=4, eps=0.1, nu=0.8),
        ContaminationSpec(family=Family.TWO_LEVEL_RR, k=8, eps=0.2, nu=0.2),
    ):
        w = closed_form_inverse(spec).W
        lp = delta_fs(1000, spec.k, w, cn)
        candidate = delta_fs_special(spec, 1000, cn)
        assert lp.value <= candidate.value + 1e-9


def test_delta_fs_identity_gives_cn():
    rep = delta_fs(250, 3, np.eye(3), 0.08)
    assert rep.value == pytest.approx(0.08, abs=1e-6)


def test_delta_fs_validation():
    with pytest.raises(InvalidSpec):
        delta_fs(100, 3, np.eye(2), 0.1)
    with pytest.raises(InvalidSpec):
        delta_fs(0, 2, np.eye(2), 0.1)
    with pytest.raises(InvalidSpec):
        delta_fs(100, 2, np.eye(2), 0.0)
    with pytest.raises(InvalidSpec):
        delta_fs(100, 2, np.eye(2), math.nan)


def test_delta_fs_special_randomized_response_is_cn():
    spec = ContaminationSpec(family=Family.RANDOMIZED_RESPONSE, k=4, eps=0.1)
    rep = delta_fs_special(spec, 500, 0.055)
    assert rep.value == pytest.approx(0.055, abs=1e-12)
    assert rep.beta_star.beta0 == pytest.approx(1.0 / 0.9, abs=1e-15)


def test_delta_fs_special_block_hand_formula():
    # beta'_k = -b eps/(1 - eps): value is (1 - b eps)/(1 - eps) c_n + B/sqrt(n)
    k, eps, b, n, cn = 4, 0.1, 2, 1000, 0.04
    spec = ContaminationSpec(family=Family.BLOCK_RR, k=k, eps=eps, b=b)
    w = closed_form_inverse(spec).W
    betas = np.full(k, -b * eps / (1.0 - eps))
    bval, _ = brute_b_term(k, n, 1.0 / (1.0 - eps), betas, w)
    want = cn * (1.0 - b * eps) / (1.0 - eps) + bval / math.sqrt(n)
    rep = delta_fs_special(spec, n, cn)
    assert rep.value == pytest.approx(want, rel=1e-12)


def test_delta_fs_special_two_level_nu_zero_reduces_to_rr():
    rr = ContaminationSpec(family=Family.RANDOMIZED_RESPONSE, k=4, eps=0.15)
    tl = ContaminationSpec(family=Family.TWO_LEVEL_RR, k=4, eps=0.15, nu=0.0)
    a = delta_fs_special(rr, 700, 0.05)
    b = delta_fs_special(tl, 700, 0.05)
    assert a.value == pytest.approx(b.value, abs=1e-9)


def test_delta_fs_special_rejects_custom_family():
    spec = ContaminationSpec(family=Family.CUSTOM, k=2, custom_matrix=np.eye(2))
    with pytest.raises(InvalidSpec):
        delta_fs_special(spec, 100, 0.1)


# ---------------------------------------------------------------------------
# covariance estimation
# ---------------------------------------------------------------------------


def small_calibration(seed, n, k):
    rng = np.random.default_rng(seed)
    scores = np.sort(rng.uniform(size=(n, k)), axis=1)
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    return CalibrationSet.from_scores(scores, labels)


def test_covariance_single_point_grid_is_score_free_variance():
    # at t = 1 every indicator is 1, so f reduces to the column sum of W at
    # the observed label and G(1, 1) is its plug-in variance
    cal = small_calibration(0, 50, 3)
    w = np.linalg.inv(np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]))
    cov = estimate_covariance(cal, w, np.array([1.0]))
    v = w[:, cal.noisy_labels].sum(axis=0)
    assert cov.sigma[0, 0] == pytest.approx(float(np.var(v)), abs=1e-12)


def test_covariance_vanishes_for_stochastic_inverse_at_one():
    # column-stochastic W makes f identically 1 at t = 1
    cal = small_calibration(1, 40, 2)
    w = np.array([[0.7, 0.4], [0.3, 0.6]])
    cov = estimate_covariance(cal, w, np.array([1.0]))
    assert abs(cov.sigma[0, 0]) <= 1e-12


def test_covariance_matches_brute_force():
    cal = small_calibration(2, 60, 3)
    rng = np.random.default_rng(7)
    w = rng.normal(size=(3, 3))
    grid = np.linspace(0.0, 1.0, 9)
    cov = estimate_covariance(cal, w, grid)
    want = brute_covariance(cal.scores, cal.noisy_labels, w, grid)
    assert np.allclose(cov.sigma, want, atol=1e-12)
    assert np.array_equal(cov.sigma, cov.sigma.T)
    assert np.min(np.diag(cov.sigma)) >= -1e-12


def test_covariance_single_class_is_scaled_bridge():
    # K = 1, W = (1): G(s, t) = F(min(s,t)) - F(s) F(t) for the empirical cdf
    rng = np.random.default_rng(3)
    scores = rng.uniform(size=(30, 1))
    cal = CalibrationSet.from_scores(scores, np.zeros(30, dtype=np.int64))
    grid = np.array([0.2, 0.5, 0.9])
    cov = estimate_covariance(cal, np.array([[1.0]]), grid)
    f = np.array([(scores[:, 0] <= t).mean() for t in grid])
    want = np.minimum.outer(f, f) - np.outer(f, f)
    assert np.allclose(cov.sigma, want, atol=1e-12)


def test_covariance_grid_validation():
    cal = small_calibration(4, 20, 2)
    w = np.eye(2)
    with pytest.raises(InvalidSpec):
        estimate_covariance(cal, w, np.array([0.5, 0.2]))
    with pytest.raises(InvalidSpec):
        estimate_covariance(cal, w, np.array([0.0, 1.5]))
    with pytest.raises(InvalidSpec):
        estimate_covariance(cal, w, np.array([]))
    with pytest.raises(InvalidSpec):
        estimate_covariance(cal, w, np.eye(2))


def test_covariance_empty_class():
    scores = np.sort(np.random.default_rng(0).uniform(size=(10, 3)), axis=1)
    labels = np.zeros(10, dtype=np.int64)
    cal = CalibrationSet.from_scores(scores, labels)
    with pytest.raises(EmptyClass) as exc:
        estimate_covariance(cal, np.eye(3), np.array([0.5]))
    assert exc.value.label == 1


# ---------------------------------------------------------------------------
# Gaussian supremum simulation
# ---------------------------------------------------------------------------


def test_gbb_sup_zero_covariance_short_circuits():
    cov = GridCovariance(grid=np.array([0.0, 1.0]), sigma=np.zeros((2, 2)))
    assert simulate_gbb_sup(cov, 10_000, seed=0) == (0.0, 0.0)


def test_gbb_sup_scalar_standard_normal():
    # absolute supremum of a single N(0, 1) coordinate has mean sqrt(2/pi)
    cov = GridCovariance(grid=np.array([0.5]), sigma=np.array([[1.0]]))
    mean, se = simulate_gbb_sup(cov, 200_000, seed=1)
    assert abs(mean - math.sqrt(2.0 / math.pi)) <= 4.0 * se


def test_gbb_sup_deterministic():
    cov = GridCovariance(grid=np.array([0.25, 0.75]), sigma=np.array([[0.2, 0.1], [0.1, 0.3]]))
    assert simulate_gbb_sup(cov, 5_000, seed=2) == simulate_gbb_sup(cov, 5_000, seed=2)


def test_gbb_sup_brownian_bridge_grid_estimate():
    # exact bridge covariance on a fine grid: below the continuum constant
    # sqrt(pi/2) log 2 but already within a few percent at h = 1/200
    grid = np.linspace(0.0, 1.0, 201)
    sigma = np.minimum.outer(grid, grid) - np.outer(grid, grid)
    cov = GridCovariance(grid=grid, sigma=0.5 * (sigma + sigma.T))
    mean, se = simulate_gbb_sup(cov, 50_000, seed=3)
    target = math.sqrt(math.pi / 2.0) * math.log(2.0)
    assert mean < target
    assert target - mean <= 0.06


def test_gbb_sup_rejects_small_m():
    cov = GridCovariance(grid=np.array([0.5]), sigma=np.array([[1.0]]))
    with pytest.raises(InvalidSpec):
        simulate_gbb_sup(cov, 999, seed=0)


# ---------------------------------------------------------------------------
# Richardson extrapolation
# ---------------------------------------------------------------------------


def test_richardson_recovers_sqrt_bias_exactly():
    a, c = 0.7, 3.1
    pairs = [(0.01, a + c * math.sqrt(0.01)), (0.005, a + c * math.sqrt(0.005))]
    assert richardson(pairs, p_assumed=0.5) == pytest.approx(a, abs=1e-12)


def test_richardson_two_term_expansion_full_ladder():
    # passes use exponents 1/2 then 1, killing sqrt(h) and h terms in turn
    a, c1, c2 = -0.3, 2.0, -5.0
    pairs = [(h, a + c1 * math.sqrt(h) + c2 * h) for h in (0.02, 0.01, 0.005)]
    assert richardson(pairs) == pytest.approx(a, abs=1e-9)


def test_richardson_constant_is_fixed_point():
    pairs = [(0.04, 1.25), (0.02, 1.25), (0.01, 1.25)]
    for order in (0, 1, 2):
        assert richardson(pairs, order=order) == pytest.approx(1.25, abs=1e-14)


def test_richardson_order_zero_returns_finest():
    pairs = [(0.02, 1.0), (0.01, 2.0)]
    assert richardson(pairs, order=0) == 2.0


def test_richardson_input_order_irrelevant():
    pairs = [(0.005, 0.9), (0.02, 0.5), (0.01, 0.7)]
    assert richardson(pairs) == richardson(list(reversed(pairs)))


def test_richardson_ladder_and_argument_validation():
    with pytest.raises(LadderMismatch):
        richardson([(0.01, 1.0), (0.004, 1.1)])
    with pytest.raises(InvalidSpec):
        richardson([])
    with pytest.raises(InvalidSpec):
        richardson([(0.01, 1.0), (0.005, 1.1)], order=2)
    with pytest.raises(InvalidSpec):
        richardson([(0.01, 1.0)], p_assumed=0.0)


# ---------------------------------------------------------------------------
# asymptotic correction
# ---------------------------------------------------------------------------


def asy_inputs(seed=0, n=2000, k=2, eps=0.2):
    rng = np.random.default_rng(seed)
    scores = np.sort(rng.uniform(size=(n, k)), axis=1)
    scores[:, -1] = 1.0
    labels = rng.integers(0, k, size=n)
    cal = CalibrationSet.from_scores(scores, labels)
    spec = ContaminationSpec(family=Family.RANDOMIZED_RESPONSE, k=k, eps=eps)
    return cal, closed_form_inverse(spec).W


def test_delta_asy_deterministic_and_consistent():
    cal, w = asy_inputs()
    kwargs = dict(h_ladder=(1 / 100, 1 / 200, 1 / 400), m=20_000, seed=11)
    a = delta_asy(cal, w, **kwargs)
    b = delta_asy(cal, w, **kwargs)
    assert a.value == b.value
    assert a.mc_diagnostics["raw"] == b.mc_diagnostics["raw"]
    # reported value is the clipped extrapolation scaled by 1/sqrt(n)
    assert a.value == max(a.mc_diagnostics["extrapolated"], 0.0) / math.sqrt(cal.n)
    assert a.method is CorrectionMethod.ASYMPTOTIC


def test_delta_asy_diagnostics_contents():
    cal, w = asy_inputs(seed=5, n=500)
    rep = delta_asy(cal, w, h_ladder=(1 / 50, 1 / 100), m=5_000, seed=0)
    d = rep.mc_diagnostics
    assert set(d) == {"h_levels", "M", "raw", "extrapolated", "condition_number"}
    assert d["h_levels"] == [1 / 50, 1 / 100]
    assert d["M"] == 5_000
    assert [lv["h"] for lv in d["raw"]] == [1 / 50, 1 / 100]
    assert all(lv["se"] > 0.0 for lv in d["raw"])
    assert d["condition_number"] >= 1.0
    # grid refinement only reveals more of the supremum
    assert d["extrapolated"] >= d["raw"][-1]["estimate"] - 1e-12


def test_delta_asy_seed_changes_estimate():
    cal, w = asy_inputs(seed=6, n=400)
    a = delta_asy(cal, w, h_ladder=(1 / 50, 1 / 100), m=5_000, seed=1)
    b = delta_asy(cal, w, h_ladder=(1 / 50, 1 / 100), m=5_000, seed=2)
    assert a.value != b.value


def test_delta_asy_rejects_non_integer_inverse_step():
    cal, w = asy_inputs(seed=7, n=100)
    with pytest.raises(InvalidSpec):
        delta_asy(cal, w, h_ladder=(0.003,), m=5_000, seed=0)
    with pytest.raises(InvalidSpec):
        delta_asy(cal, w, h_ladder=(), m=5_000, seed=0)


# ---------------------------------------------------------------------------
# delta** bound and diagnostics
# ---------------------------------------------------------------------------


def test_delta_star_star_identity_equals_envelope():
    n = 100
    v = delta_star_star_bound(n, 3, np.eye(3))
    assert v == pytest.approx(cn_envelope(n), abs=1e-9)


def test_delta_star_star_randomized_response_candidate():
    # beta' = (1/(1-eps), -eps/(1-eps) 1) is feasible with Omega = 0, so the
    # optimum is at most the envelope times (1 + eps)/(1 - eps)
    n, k, eps = 400, 4, 0.2
    spec = ContaminationSpec(family=Family.RANDOMIZED_RESPONSE, k=k, eps=eps)
    w = closed_form_inverse(spec).W
    v = delta_star_star_bound(n, k, w)
    assert v <= cn_envelope(n) * (1.0 + eps) / (1.0 - eps) + 1e-9


def test_delta_star_star_ignores_cn_argument():
    w = closed_form_inverse(
        ContaminationSpec(family=Family.BLOCK_RR, k=4, eps=0.1, b=2)
    ).W
    assert delta_star_star_bound(300, 4, w, c_n=0.5) == delta_star_star_bound(300, 4, w)


def test_delta_star_star_dominates_signed_problem():
    # absolute-value objective over the same feasible set cannot be smaller
    w = closed_form_inverse(
        ContaminationSpec(family=Family.TWO_LEVEL_RR, k=4, eps=0.2, nu=0.5)
    ).W
    n = 500
    signed = delta_fs(n, 4, w, cn_envelope(n)).value
    assert delta_star_star_bound(n, 4, w) >= signed - 1e-9


def test_diagnostics_identity_model():
    n, dss, dn = 100, 0.1, 0.05
    out = upper_bound_diagnostics(n, 2, np.eye(2), [0.5, 0.5], [0.5, 0.5], dn, dss)
    assert out["d_n"] == pytest.approx(n**0.25 * dss, abs=1e-15)
    # bracket is exactly 1 for the identity model so the last term vanishes
    assert out["phi_n"] == pytest.approx(3.0 * dss + 2.0 / n + n**-0.25, abs=1e-12)
    want = -0.1 + dn + math.sqrt(math.log(2.0 * n) / (2.0 * n)) + n**0.25 * dss
    assert out["assumption_a6_threshold"] == pytest.approx(want, abs=1e-12)


def test_diagnostics_binary_hand_instance():
    # T = [[.9, .1], [.1, .9]], uniform rho: V = [[1.125, -.125], [-.125, 1.125]]
    # giving bracket 1.25
    n, dss = 100, 0.18
    t = np.array([[0.9, 0.1], [0.1, 0.9]])
    out = upper_bound_diagnostics(n, 2, t, [0.5, 0.5], [0.5, 0.5], 0.0, dss)
    want = 3.0 * dss + 2.0 / n + n**-0.25 + (1.25 - 1.0) / (n + 1.0)
    assert out["phi_n"] == pytest.approx(want, abs=1e-12)


def test_diagnostics_alpha_moves_only_threshold():
    t = np.array([[0.9, 0.1], [0.1, 0.9]])
    lo = upper_bound_diagnostics(50, 2, t, [0.5, 0.5], [0.5, 0.5], 0.1, 0.1, alpha=0.05)
    hi = upper_bound_diagnostics(50, 2, t, [0.5, 0.5], [0.5, 0.5], 0.1, 0.1, alpha=0.2)
    assert lo["phi_n"] == hi["phi_n"] and lo["d_n"] == hi["d_n"]
    assert lo["assumption_a6_threshold"] - hi["assumption_a6_threshold"] == pytest.approx(
        0.15, abs=1e-12
    )


def test_diagnostics_singular_mixing_matrix():
    t = np.array([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(SingularM):
        upper_bound_diagnostics(100, 2, t, [0.5, 0.5], [0.5, 0.5], 0.1, 0.1)


def test_diagnostics_validation():
    t = np.eye(2)
    with pytest.raises(InvalidSpec):
        upper_bound_diagnostics(100, 2, t, [0.6, 0.6], [0.5, 0.5], 0.1, 0.1)
    with pytest.raises(InvalidSpec):
        upper_bound_diagnostics(100, 2, t, [1.0, 0.0], [0.5, 0.5], 0.1, 0.1)
    with pytest.raises(InvalidSpec):
        upper_bound_diagnostics(100, 2, t, [0.5, 0.5], [0.5, 0.5], -0.1, 0.1)
    with pytest.raises(InvalidSpec):
        upper_bound_diagnostics(100, 2, t, [0.5, 0.5], [0.5, 0.5], 0.1, 0.1, alpha=1.0)


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------


def test_correction_report_rejects_negative_value():
    with pytest.raises(InvalidSpec):
        CorrectionReport(method=CorrectionMethod.CN_ONLY, value=-0.01)


def test_correction_report_to_dict_is_json_ready():
    spec = ContaminationSpec(family=Family.RANDOMIZED_RESPONSE, k=2, eps=0.1)
    rep = delta_fs(50, 2, closed_form_inverse(spec).W, 0.1)
    blob = json.loads(json.dumps(rep.to_dict()))
    assert blob["method"] == "finite_sample"
    assert blob["value"] == rep.value
    assert blob["beta_star"]["beta0"] == rep.beta_star.beta0


def test_grid_covariance_rejects_asymmetry():
    with pytest.raises(InvalidSpec):
        GridCovariance(grid=np.array([0.0, 1.0]), sigma=np.array([[1.0, 0.5], [0.2, 1.0]]))
