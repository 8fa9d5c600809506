import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safem import analysis as A
from safem.driver import LevelSummary, RunLog


def synthetic_log(dofs, eta, *, times=None, eta_star=None, quasi=None, n_tri=None, L=1):
    levels = []
    for i, (n, e) in enumerate(zip(dofs, eta)):
        levels.append(LevelSummary(
            level=i, level_type="solve", k_final=1,
            num_triangles=int(n_tri[i]) if n_tri is not None else 2 * int(n),
            num_dofs=int(n), estimator=float(e),
            estimator_exact=float(eta_star[i]) if eta_star is not None else math.nan,
            quasi_error=float(quasi[i]) if quasi is not None else math.nan,
            cost=int(sum(dofs[: i + 1])) * 2,
            cumulative_time=float(times[i]) if times is not None else 0.0,
        ))
    return RunLog("synthetic", {"L": L}, levels=levels)


DOFS = np.array([10, 40, 160, 640, 2560, 10240])


def test_fit_rate_power_law():
    log = synthetic_log(DOFS, DOFS ** -0.5)
    fit = A.fit_rate(log, window="all")
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    fit = A.fit_rate(synthetic_log(DOFS, np.full(6, 3.0)), window="all")
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_errors():
    log = synthetic_log(DOFS[:2], DOFS[:2] ** -0.5)
    with pytest.raises(A.AnalysisError):
        A.fit_rate(log, window="all")
    log = synthetic_log(DOFS, DOFS ** -0.5)
    with pytest.raises(A.AnalysisError):
        A.fit_rate(log, quantity="quasi_error")
    with pytest.raises(A.AnalysisError):
        A.fit_rate(log, abscissa="seconds")


def test_final_decade_window():
    log = synthetic_log(DOFS, DOFS ** -0.5)
    fit = A.fit_rate(log)
    # 10240 / 10 = 1024 -> suffix starting at 640 spans the decade
    assert fit.num_points == 3
    dense = np.array([100, 150, 300, 600, 900, 1200, 2000])
    fit = A.fit_rate(synthetic_log(dense, dense ** -0.5))
    assert fit.num_points == 6


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.1, 10.0))
def test_fit_recovers_exponent(s, c):
    fit = A.fit_loglog(DOFS, c * DOFS.astype(float) ** s)
    assert fit.slope == pytest.approx(s, abs=1e-12)


def test_tail_geometric_half():
    h = 0.5 ** np.arange(12)
    rep = A.tail_summability(h)
    assert np.allclose(rep.ratios, 1.0, rtol=1e-12)
    assert rep.q_hat == pytest.approx(0.5, rel=1e-12)
    raw = A.tail_summability(h, complete_tail=False)
    assert raw.ratios[-1] == 0.0
    assert raw.ratios[0] == pytest.approx(1.0 - 0.5**11, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(4, 30))
def test_tail_geometric_property(q, n):
    rep = A.tail_summability(q ** np.arange(n))
    assert np.allclose(rep.ratios, q / (1 - q), rtol=1e-12)


def test_tail_constant_grows():
    rep = A.tail_summability(np.ones(8), complete_tail=False)
    assert np.array_equal(rep.ratios, np.arange(7, -1, -1))
    assert not rep.non_increasing_trend or rep.ratios[0] > rep.ratios[-1]
    assert A.tail_summability(np.ones(8)).tail_completed is False


def test_tail_zero_sentinel():
    rep = A.tail_summability([1.0, 0.0, 0.5], complete_tail=False)
    assert math.isinf(rep.ratios[1])
    assert rep.infinite


def test_tail_needs_oracle():
    with pytest.raises(A.AnalysisError):
        A.tail_summability(synthetic_log(DOFS, DOFS ** -0.5))


def test_lemma10_hand_values():
    assert A.lemma10_M(1, 0.5, 0.5, 0.1, 1.0) == pytest.approx(1.4, rel=1e-15)
    assert A.lemma10_M(0, 0.5, 0.5, 0.1, 1.0) == 2.0
    out = A.lemma10_bound(0.5, 0.5, 0.1, 1.0, N=1)
    assert out["M_of_N"] == pytest.approx(1.4, rel=1e-15)
    assert out["found"]
    assert A.lemma10_M(out["N0"], 0.5, 0.5, 0.1, 1.0) < 1
    assert out["C_tilde_bound"] >= 0
    m = [A.lemma10_M(N, 0.5, 0.5, 0.1, 1.0) for N in (2, 20, 200)]
    assert m[2] < m[1] < m[0]


def test_lemma10_delta_one_convention():
    # with delta = 1, N^0 = 1 also at N = 0
    assert A.lemma10_M(0, 0.5, 1.0, 0.1, 1.0) == pytest.approx((1 + 2 * 0.1) / 0.5)


@pytest.mark.parametrize("kwargs", [
    dict(q=1.0, delta=0.5, C=0.1, eps=1.0), dict(q=0.5, delta=0.0, C=0.1, eps=1.0),
    dict(q=0.5, delta=0.5, C=0.0, eps=1.0), dict(q=0.5, delta=0.5, C=0.1, eps=3.0),
])
def test_lemma10_domain(kwargs):
    with pytest.raises(A.AnalysisError):
        A.lemma10_bound(**kwargs)


def test_lemma10_not_found_within_cap():
    out = A.lemma10_bound(0.9, 1.0, 50.0, 0.1, scan_cap=10)
    assert not out["found"] and out["N0"] is None


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.1, 1.0), st.floats(0.01, 2.0), st.floats(0.05, 0.95))
def test_lemma10_positive_and_eventually_decreasing(q, delta, C, frac):
    eps = frac * (q**-2 - 1)
    values = [A.lemma10_M(N, q, delta, C, eps) for N in range(0, 60)]
    assert all(v > 0 for v in values)
    peak = int(np.argmax(values))
    tail = values[peak:]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(tail, tail[1:]))


def test_formula_helpers():
    assert A.lambda_opt(0.5, 2.0) == pytest.approx(0.5)
    assert A.estimator_contraction(2 ** -0.25, 0.5) == pytest.approx(math.sqrt(1 - (1 - 2**-0.5) * 0.5))
    assert A.theta_opt(1.0, 1.0) == 0.5
    assert A.theta_prime(0.25, 0.0, 1.0) == pytest.approx(0.25)
    assert A.zarantonello_lipschitz(1.0, 1.0, 1.0) == 0.0
    assert A.zarantonello_lipschitz(0.5, 1.0, 1.0) == pytest.approx(0.5)
    assert A.inexact_zarantonello_bound(0.5, 1.0, 3) == pytest.approx(2.0)


def test_equivalence_check():
    eta = np.array([1.0, 0.5, 0.25, 0.125])
    log = synthetic_log(DOFS[:4], eta, eta_star=eta)
    out = A.estimator_equivalence_check(log, lam=1e-3)
    assert np.all(out["ratios"] == 1.0)
    out = A.estimator_equivalence_check(synthetic_log(DOFS[:4], eta, eta_star=eta * 2), 0.01, 0.5)
    assert out["bound_holds"] is False
    with pytest.raises(A.AnalysisError):
        A.estimator_equivalence_check(synthetic_log(DOFS[:4], eta), 0.1)


def test_speedup_examples():
    s, flags = A.speedup_from_arrays([1.0, 0.1], [1.0, 10.0], [10 ** -0.5], [1.0])
    assert s[0] == pytest.approx(10**0.5, rel=1e-12)
    assert not flags[0]
    s, flags = A.speedup_from_arrays([1.0, 0.1], [1.0, 10.0], [0.01], [5.0])
    assert flags[0] and s[0] == pytest.approx(2.0)
    ref = synthetic_log(DOFS, DOFS ** -0.5, times=np.arange(1.0, 7.0))
    out = A.speedup_factor(ref, ref)
    assert np.allclose(out["speedup"], 1.0)
    assert not out["extrapolated"].any()
    with pytest.raises(A.AnalysisError):
        A.speedup_factor(ref, ref, error_field="quasi_error")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0))
def test_speedup_scale_equivariant(c):
    rng = np.random.default_rng(0)
    err = np.sort(rng.random(6))[::-1] + 0.01
    t = np.cumsum(rng.random(6)) + 0.1
    cand_e, cand_t = rng.uniform(0.02, 0.9, 4), rng.uniform(0.1, 3, 4)
    base, _ = A.speedup_from_arrays(err, t, cand_e, cand_t)
    scaled, _ = A.speedup_from_arrays(err, c * t, cand_e, cand_t)
    assert np.allclose(scaled, c * base, rtol=1e-12)


def test_weighted_time():
    assert A.weighted_time(4.0, 9.0, p=2) == pytest.approx(36.0)
    assert A.weighted_time(4.0, 9.0, p=1) == pytest.approx(12.0)
    log = synthetic_log(DOFS[:2], [4.0, 2.0], times=[0.0, 9.0])
    assert np.allclose(A.weighted_cumulative_time(log), [0.0, 6.0])


def test_approx_class():
    n_tri = np.array([1, 4, 16, 64, 256])
    eta_star = (n_tri - 1 + 1.0) ** -0.5
    log = synthetic_log(n_tri, eta_star, eta_star=eta_star, n_tri=n_tri)
    assert A.empirical_approx_class(log, 0.5)["sup"] == pytest.approx(1.0)
    values = A.empirical_approx_class(log, 1.0)["values"]
    assert np.all(np.diff(values) > 0)
    with pytest.raises(A.AnalysisError):
        A.empirical_approx_class(synthetic_log(n_tri, eta_star), 0.5)


def test_predict_threshold():
    prefix = DOFS[:4]
    pred, reached = A.predict_threshold(prefix, prefix ** -0.5, 1e-2)
    assert pred == 10000 and not reached
    pred, reached = A.predict_threshold(prefix, prefix ** -0.5, 0.5)
    assert reached and pred <= prefix[-1]
    with pytest.raises(A.AnalysisError):
        A.predict_threshold(prefix[:2], prefix[:2] ** -0.5, 1e-2)
    with pytest.raises(A.AnalysisError):
        A.predict_threshold(prefix, prefix ** 0.5, 1e-2)
    log = synthetic_log(prefix, prefix ** -0.5)
    assert A.predict_threshold(log, 1e-2)[0] == 10000
