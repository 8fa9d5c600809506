"""Post-run diagnostics: rates, tail summability, explicit constants, speed-ups."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

_QUANTITIES = {
    "estimator": "estimator",
    "quasi_error": "quasi_error",
    "reference_error": "reference_error",
    "algebraic_error": "algebraic_error",
    "estimator_exact": "estimator_exact",
}
_ABSCISSAE = {"dofs": "num_dofs", "cost": "cost", "triangles": "num_triangles", "work": "work"}


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    num_points: int


def fit_loglog(x, y) -> RateFit:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 3:
        raise AnalysisError("a rate fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise AnalysisError("log-log fit needs positive data")
    res = stats.linregress(np.log(x), np.log(y))
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue**2), len(x))


def _window_mask(dofs, window):
    n = len(dofs)
    if window is None or window == "all":
        return np.ones(n, dtype=bool)
    if window == "final_decade":
        # smallest suffix spanning a full decade of dofs, at least 3 points
        below = np.flatnonzero(dofs <= dofs[-1] / 10.0)
        start = below[-1] if len(below) else 0
        start = max(0, min(start, n - 3))
        mask = np.zeros(n, dtype=bool)
        mask[start:] = True
        return mask
    if isinstance(window, slice):
        mask = np.zeros(n, dtype=bool)
        mask[window] = True
        return mask
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(window)] = True
    return mask


def fit_rate(log, quantity="estimator", abscissa="dofs", window="final_decade") -> RateFit:
    """Log-log slope over terminated solve levels.

    ``window`` is ``"final_decade"`` (the shortest run of final levels whose
    dofs span a factor 10, at least 3 levels, chosen on dofs whatever the
    abscissa), ``"all"``, a slice or an index array.
    """
    if quantity not in _QUANTITIES:
        raise AnalysisError(f"unknown quantity {quantity!r}")
    if abscissa not in _ABSCISSAE:
        raise AnalysisError(f"unknown abscissa {abscissa!r}")
    y = log.column(_QUANTITIES[quantity])
    x = log.column(_ABSCISSAE[abscissa])
    mask = _window_mask(log.column("num_dofs"), window)
    if np.any(np.isnan(y[mask])):
        raise AnalysisError(f"{quantity} is not available in this log")
    return fit_loglog(x[mask], y[mask])


@dataclass(frozen=True)
class TailSummabilityReport:
    ratios: np.ndarray
    max_ratio: float
    spearman: float
    non_increasing_trend: bool
    q_hat: float
    tail_completed: bool
    infinite: bool


def geometric_factor(values) -> float:
    """``exp`` of the least-squares slope of ``log values`` against the index."""
    h = np.asarray(values, dtype=float)
    if len(h) < 2 or np.any(h <= 0):
        return math.nan
    n = np.arange(len(h))
    return float(np.exp(np.polyfit(n, np.log(h), 1)[0]))


def tail_summability(log_or_values, complete_tail=True) -> TailSummabilityReport:
    """Ratios ``sum_{m>n} H_m / H_n`` over solve-level quasi-errors.

    With ``complete_tail`` the unseen remainder after the last level is
    added as a geometric series with the fitted factor (when it is < 1), so
    an exactly geometric sequence yields ``q / (1 - q)`` at every index.
    """
    if hasattr(log_or_values, "column"):
        h = log_or_values.column("quasi_error")
        if np.any(np.isnan(h)):
            raise AnalysisError("quasi-errors missing; rerun with oracle tracking")
    else:
        h = np.asarray(log_or_values, dtype=float)
    if len(h) == 0:
        raise AnalysisError("empty quasi-error sequence")
    q_hat = geometric_factor(h)
    tails = np.concatenate([np.cumsum(h[::-1])[::-1][1:], [0.0]])
    completed = bool(complete_tail and np.isfinite(q_hat) and q_hat < 1.0)
    if completed:
        tails = tails + h[-1] * q_hat / (1.0 - q_hat)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(h > 0, tails / np.where(h > 0, h, 1.0), np.where(tails > 0, np.inf, 0.0))
    half = ratios[len(ratios) // 2:]
    finite_half = half[np.isfinite(half)]
    if len(finite_half) >= 3 and np.ptp(finite_half) > 0:
        rho = float(stats.spearmanr(np.arange(len(finite_half)), finite_half).statistic)
    else:
        rho = 0.0
    return TailSummabilityReport(
        ratios=ratios,
        max_ratio=float(np.max(ratios)),
        spearman=rho,
        non_increasing_trend=rho <= 0.0,
        q_hat=q_hat,
        tail_completed=completed,
        infinite=bool(np.any(np.isinf(ratios))),
    )


def _power(N, delta):
    # 0^(1 - delta) is taken as 0 for delta < 1 and 1 for delta = 1
    if N == 0:
        return 1.0 if delta == 1.0 else 0.0
    return float(N) ** (1.0 - delta)


def lemma10_M(N, q, delta, C, eps):
    a, b = 1.0 + eps, 1.0 + 1.0 / eps
    prefactor = (1.0 + b * C * _power(N, delta)) / (1.0 - a * q * q)
    log_prod = 0.0
    for R in range(1, N + 1):
        t = b * C * _power(R, delta)
        log_prod += math.log((a * q * q + t) / (1.0 + t))
    return prefactor * math.exp(log_prod)


def lemma10_bound(q, delta, C, eps, N=1, scan_cap=100000):
    """Evaluate ``M(N)``, the first ``N0`` with ``M(N0) < 1`` and the bound on ``C~``."""
    if not 0.0 < q < 1.0:
        raise AnalysisError("q must lie in (0, 1)")
    if not 0.0 < delta <= 1.0:
        raise AnalysisError("delta must lie in (0, 1]")
    if not C > 0:
        raise AnalysisError("C must be positive")
    if not 0.0 < eps < q**-2 - 1.0:
        raise AnalysisError("eps must lie in (0, q^-2 - 1)")
    M_N = lemma10_M(N, q, delta, C, eps)
    a, b = 1.0 + eps, 1.0 + 1.0 / eps
    values, N0, log_prod = [], None, 0.0
    for n in range(scan_cap + 1):
        if n > 0:
            t = b * C * _power(n, delta)
            log_prod += math.log((a * q * q + t) / (1.0 + t))
        m = (1.0 + b * C * _power(n, delta)) / (1.0 - a * q * q) * math.exp(log_prod)
        values.append(m)
        if m < 1.0:
            N0 = n
            break
    if N0 is None:
        return {"M_of_N": M_N, "N0": None, "C_tilde_bound": math.nan, "found": False}
    M0 = values[N0]
    if N0 == 0:
        c_tilde = math.nan
    else:
        c_tilde = (
            M0 ** ((1.0 - N0) / (2.0 * N0)) / (1.0 - M0 ** (1.0 / (2.0 * N0)))
            * max(math.sqrt(v) for v in values[:N0])
        )
    return {"M_of_N": M_N, "N0": N0, "C_tilde_bound": c_tilde, "found": True}


def lambda_opt(q_alg, C_stab):
    return (1.0 - q_alg) / (C_stab * q_alg)


def estimator_contraction(q_red, theta):
    """``q_est = [1 - (1 - q_red^2) theta]^{1/2}``."""
    return math.sqrt(1.0 - (1.0 - q_red**2) * theta)


def theta_opt(C_stab, C_drel):
    return 1.0 / (1.0 + C_stab**2 * C_drel**2)


def theta_prime(theta, lam, lam_opt):
    r = lam / lam_opt
    return (math.sqrt(theta) + r) ** 2 / (1.0 - r) ** 2


def zarantonello_lipschitz(delta, C_bnd, C_ell):
    """``C[delta] = [1 - delta (2 - delta C_bnd^2 / C_ell^2)]^{1/2}``."""
    val = 1.0 - delta * (2.0 - delta * C_bnd**2 / C_ell**2)
    return math.sqrt(max(val, 0.0))


def inexact_zarantonello_bound(C_delta, C_alg, J):
    return C_delta + C_alg**J * (C_delta + 1.0)


def estimator_equivalence_check(log, lam, lam_opt_estimate=None):
    """Ratios ``eta(u^k) / eta(u*)`` on solve levels and the two-sided bound."""
    eta = log.column("estimator")
    eta_star = log.column("estimator_exact")
    if np.any(np.isnan(eta_star)):
        raise AnalysisError("exact estimator missing; rerun with oracle tracking")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(eta_star > 0, eta / eta_star, np.where(eta > 0, np.inf, 1.0))
    out = {"ratios": ratios, "min": float(ratios.min()), "max": float(ratios.max())}
    if lam_opt_estimate is not None:
        r = lam / lam_opt_estimate
        lower, upper = (1.0 - r) * eta, (1.0 + r) * eta
        out.update(
            lower=lower, upper=upper,
            bound_holds=bool(np.all((lower <= eta_star) & (eta_star <= upper))),
        )
    return out


def _positive_loglog(err, t):
    err, t = np.asarray(err, dtype=float), np.asarray(t, dtype=float)
    keep = (err > 0) & (t > 0) & np.isfinite(err) & np.isfinite(t)
    return np.log(err[keep]), np.log(t[keep])


def speedup_from_arrays(ref_err, ref_time, cand_err, cand_time):
    """``S = T_ref(e) / T`` with ``T_ref`` interpolated piecewise linearly in log-log.

    Returns ``(speedups, extrapolated)``; outside the reference error range
    the nearest reference time is used and the entry is flagged.
    """
    le, lt = _positive_loglog(ref_err, ref_time)
    if len(le) == 0:
        raise AnalysisError("reference log has no usable (error, time) points")
    order = np.argsort(le, kind="stable")
    le, lt = le[order], lt[order]
    cand_err = np.asarray(cand_err, dtype=float)
    cand_time = np.asarray(cand_time, dtype=float)
    with np.errstate(divide="ignore"):
        x = np.log(cand_err)
    t_ref = np.exp(np.interp(x, le, lt))
    extrapolated = (x < le[0]) | (x > le[-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        s = t_ref / cand_time
    return s, extrapolated


def speedup_factor(reference_log, candidate_log, error_field="estimator"):
    """Per terminated solve level of ``candidate_log``."""
    ref_err = reference_log.column(error_field)
    cand_err = candidate_log.column(error_field)
    if np.all(np.isnan(ref_err)) or np.all(np.isnan(cand_err)):
        raise AnalysisError(f"{error_field} is not available in both logs")
    s, flags = speedup_from_arrays(
        ref_err, reference_log.column("cumulative_time"),
        cand_err, candidate_log.column("cumulative_time"),
    )
    return {"levels": [lv.level for lv in candidate_log.solve_levels()], "speedup": s,
            "extrapolated": flags}


def weighted_time(eta, time_, p=1):
    return float(eta) * float(time_) ** (p / 2.0)


def weighted_cumulative_time(log, p=1):
    eta = log.column("estimator")
    t = log.column("cumulative_time")
    return eta * t ** (p / 2.0)


def empirical_approx_class(log, s):
    """Supremum of ``(#T - #T0 + 1)^s eta(u*)`` over solve levels."""
    eta_star = log.column("estimator_exact")
    if np.any(np.isnan(eta_star)):
        raise AnalysisError("exact estimator missing; rerun with oracle tracking")
    n_tri = log.column("num_triangles")
    n0 = log.levels[0].num_triangles
    values = (n_tri - n0 + 1.0) ** s * eta_star
    return {"sup": float(values.max()), "values": values}


def predict_threshold(dofs, eta=None, tau=None):
    """Dofs at which the fitted ``eta ~ dofs^slope`` reaches ``tau``.

    Accepts a run log (solve levels used) or arrays.  Returns
    ``(predicted_dofs, already_reached)``.
    """
    if hasattr(dofs, "column"):
        log, tau = dofs, eta if tau is None else tau
        dofs, eta = log.column("num_dofs"), log.column("estimator")
    dofs, eta = np.asarray(dofs, dtype=float), np.asarray(eta, dtype=float)
    if len(dofs) < 3:
        raise AnalysisError("prediction needs at least 3 solve levels")
    fit = fit_loglog(dofs, eta)
    if fit.slope >= 0:
        raise AnalysisError("estimator does not decrease; no threshold prediction")
    log_n = (math.log(tau) - fit.intercept) / fit.slope
    raw = math.exp(log_n)
    # snap values within rounding noise of an integer before taking the ceiling
    nearest = round(raw)
    predicted = int(nearest) if abs(raw - nearest) <= 1e-9 * max(1.0, raw) else math.ceil(raw)
    return predicted, bool(tau >= eta[-1])
