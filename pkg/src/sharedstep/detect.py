"""Slope-change test for an unobserved shared step, and recovery of its law.

Incidence of disease ``j`` is fitted twice: over the whole cohort of
individuals free of ``j`` (``fit_free``, the marginal incidence whose
cumulative hazard follows t^(q0+qj+2)) and in individuals who already have
``k`` (``fit_cond``, with entry at the ``k`` onset).  Under a shared first
step the conditional hazard loses the first step's power, so its fitted power
drops by ``q0 + 1`` and its level rises.  A proportional effect of ``k`` on
``j`` moves the level only.

Censoring the free fit at ``k`` onset is deliberately avoided: under a shared
step that censoring removes exactly the individuals past the first step.

The two fits share the ``j`` events that follow ``k``, so their estimates are
positively correlated and the independent-errors z statistic is conservative.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .model import coeff_kappa
from .simulate import EventTable, onset_matrix
from .survival import FitResult, InsufficientDataError, nelson_aalen

__all__ = [
    "Verdict",
    "DetectionReport",
    "HiddenStepEstimate",
    "CurveFits",
    "DetectionError",
    "slope_change_test",
    "recover_hidden_step",
    "curve_fits",
    "fit_cdf_power_law",
    "read_report_json",
]


class DetectionError(ValueError):
    pass


class Verdict(str, Enum):
    SHARED_STEP = "SharedStep"
    PROPORTIONAL_SHIFT = "ProportionalShift"
    INDEPENDENT = "Independent"
    INCONCLUSIVE = "Inconclusive"


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _norm_isf(p: float) -> float:
    from scipy.stats import norm

    return float(norm.isf(p))


@dataclass(frozen=True)
class DetectionReport:
    fit_free: FitResult
    fit_cond: FitResult
    slope_diff: float
    z: float
    p_value: float
    level_diff: float
    z_level: float
    p_level: float
    alpha: float
    verdict: Verdict
    recovered_q0: Optional[float] = None
    recovered_lam0: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_dict(), indent=2)
        if path is None:
            return text
        Path(path).write_text(text + "\n")

    def summary(self) -> str:
        f, c = self.fit_free, self.fit_cond
        lines = [
            f"disease-free fit:  q = {f.q:.3f} +/- {f.se_q:.3f}  ({f.n_events} events)",
            f"conditional fit:   q = {c.q:.3f} +/- {c.se_q:.3f}  ({c.n_events} events)",
            f"slope difference:  {self.slope_diff:.3f}  (z = {self.z:.2f}, p = {self.p_value:.3g})",
            f"log-hazard shift at age {c.ref_age:.4g}: {self.level_diff:.3f}  (z = {self.z_level:.2f})",
            f"verdict at alpha = {self.alpha:g}: {self.verdict.value}",
        ]
        if self.recovered_q0 is not None:
            text = f"hidden first step: q0 = {self.recovered_q0:.3f}"
            if self.recovered_lam0 is not None:
                text += f", lambda0 = {self.recovered_lam0:.4g}"
            lines.append(text)
        return "\n".join(lines)


def read_report_json(source) -> DetectionReport:
    text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
    d = json.loads(text)
    d["fit_free"] = FitResult.from_dict(d["fit_free"])
    d["fit_cond"] = FitResult.from_dict(d["fit_cond"])
    d["verdict"] = Verdict(d["verdict"])
    return DetectionReport(**d)


def slope_change_test(
    fit_free: FitResult,
    fit_cond: FitResult,
    alpha: float = 0.05,
    hidden: "HiddenStepEstimate | None" = None,
) -> DetectionReport:
    """Classify how prior disease ``k`` changes the incidence of ``j``.

    The slope test is a two-sided z-test on ``q_free - q_cond``; the level test
    compares log hazards at the conditional fit's reference age.  Each uses
    ``alpha / 2`` so the chance of any verdict other than ``Independent`` under
    independence stays below ``alpha``.

    On a ``SharedStep`` verdict the recovered ``q0`` is ``slope_diff - 1``
    unless ``hidden`` (from :func:`recover_hidden_step`) is given, in which
    case its ``(q0, lam0)`` are reported.  ``lam0`` needs ``hidden``.
    """
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    for label, fit in (("fit_free", fit_free), ("fit_cond", fit_cond)):
        if not fit.converged:
            raise DetectionError(f"{label} did not converge")
        if not (math.isfinite(fit.se_q) and math.isfinite(fit.se_log_lam)):
            raise DetectionError(f"{label} has no finite standard errors")
    diff = fit_free.q - fit_cond.q
    se = math.hypot(fit_free.se_q, fit_cond.se_q)
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    p = min(1.0, 2.0 * _norm_sf(abs(z)))

    age = fit_cond.ref_age
    lc, se_c = fit_cond.log_hazard(age)
    lf, se_f = fit_free.log_hazard(age)
    level = lc - lf
    se_level = math.hypot(se_c, se_f)
    if se_level > 0:
        z_level = level / se_level
    else:
        z_level = 0.0 if level == 0 else math.copysign(math.inf, level)
    p_level = min(1.0, 2.0 * _norm_sf(abs(z_level)))

    each = alpha / 2.0
    crit = _norm_isf(each)
    slope_changed = p < each
    elevated = z_level > crit
    if slope_changed and diff > 0 and elevated:
        verdict = Verdict.SHARED_STEP
    elif slope_changed:
        verdict = Verdict.INCONCLUSIVE
    elif p_level < each:
        verdict = Verdict.PROPORTIONAL_SHIFT
    else:
        verdict = Verdict.INDEPENDENT

    q0 = lam0 = None
    if verdict is Verdict.SHARED_STEP:
        if hidden is not None:
            q0, lam0 = hidden.q0, hidden.lam0
        else:
            # free power ~ q0 + qj + 1, conditional power ~ qj
            q0 = diff - 1.0
    return DetectionReport(
        fit_free, fit_cond, diff, z, p, level, z_level, p_level, alpha, verdict, q0, lam0
    )


# ----------------------------------------------------------- curve fitting


@dataclass(frozen=True)
class CurveFits:
    """Power-law fits F(t) ~ lam t^(q+1) of the cdf-type curves on one age grid."""

    grid: np.ndarray
    fit_j: FitResult
    fit_k: FitResult
    fit_ratio: FitResult
    fit_cond: FitResult


def fit_cdf_power_law(
    ages, log_values, cov, disease: str = "", n_events: int = 0, n_at_risk: int = 0
) -> FitResult:
    """Generalised least squares of ``log F = log lam + (q+1) log t``."""
    ages = np.asarray(ages, float)
    y = np.asarray(log_values, float)
    X = np.column_stack([np.log(ages), np.ones_like(ages)])
    cov = np.asarray(cov, float)
    try:
        W = np.linalg.inv(cov)
        info = X.T @ W @ X
        beta_cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise DetectionError("singular covariance in curve fit") from None
    beta = beta_cov @ X.T @ W @ y
    resid = y - X @ beta
    chi2 = float(resid @ W @ resid)
    return FitResult(
        q=float(beta[0] - 1.0),
        lam=float(math.exp(beta[1])),
        se_q=float(math.sqrt(max(beta_cov[0, 0], 0.0))),
        se_log_lam=float(math.sqrt(max(beta_cov[1, 1], 0.0))),
        cov_q_log_lam=float(beta_cov[0, 1]),
        log_likelihood=-0.5 * chi2,
        n_events=int(n_events),
        n_at_risk=int(n_at_risk),
        disease=disease,
        ref_age=float(math.exp(np.mean(np.log(ages)))),
    )


def _na_cdf(ages_event, censor, grid, name):
    """1 - exp(-H) from a Nelson-Aalen fit on entry-0 records, read at ``grid``."""
    observed = np.isfinite(ages_event)
    exit_ = np.where(observed, ages_event, censor)
    table = EventTable((name,), np.arange(len(exit_)), np.zeros(len(exit_), np.int32),
                       np.zeros(len(exit_)), exit_, observed)
    curve = nelson_aalen(table)
    idx = np.searchsorted(curve.age, grid, side="right") - 1
    H = np.where(idx >= 0, curve.H[np.maximum(idx, 0)], 0.0)
    return -np.expm1(-H)


def curve_fits(table: EventTable, j: str, k: str, n_grid: int = 9) -> CurveFits:
    """Fit F_j, F_k, F_jF_k/F_jk and F_jk/F_k on the deciles of joint event ages.

    ``table`` must be a raw cohort table (one record per subject and disease,
    entry age 0).  Each cdf is the Nelson-Aalen estimate mapped through
    1 - exp(-H); the covariance of the log curves is taken from the empirical
    influence functions, which assumes no censoring before the last grid age.
    """
    if j == k:
        raise DetectionError("j and k must differ")
    if np.any(table.entry > 0):
        raise DetectionError("curve_fits needs a raw table with entry age 0")
    onsets, subjects = onset_matrix(table)
    cj, ck = table.code(j), table.code(k)
    # end of follow-up: the latest exit age across a subject's records
    censor = np.zeros(len(subjects))
    np.maximum.at(censor, np.searchsorted(subjects, table.subject_id), table.exit)
    tj, tk = onsets[:, cj], onsets[:, ck]
    tjk = np.maximum(tj, tk)
    both = np.isfinite(tjk)
    n_both = int(both.sum())
    if n_both < 2 * n_grid:
        raise InsufficientDataError(f"only {n_both} subjects with both {j!r} and {k!r}")
    probs = np.arange(1, n_grid + 1) / (n_grid + 1)
    grid = np.quantile(tjk[both], probs)
    if np.any(np.isinf(onsets).any(axis=1) & (censor < grid[-1])):
        warnings.warn("records censored inside the age grid; curve covariances are approximate")

    Fj = _na_cdf(tj, censor, grid, j)
    Fk = _na_cdf(tk, censor, grid, k)
    Fjk = _na_cdf(tjk, censor, grid, f"{j}&{k}")
    n = len(tj)
    Ij = (tj[:, None] <= grid[None, :]).astype(float)
    Ik = (tk[:, None] <= grid[None, :]).astype(float)
    Ijk = Ij * Ik

    def cov_of(psi):
        c = np.cov(psi, rowvar=False) / n
        return np.atleast_2d(c)

    psi_j = Ij / Fj
    psi_k = Ik / Fk
    psi_jk = Ijk / Fjk
    fit_j = fit_cdf_power_law(grid, np.log(Fj), cov_of(psi_j), j, int(np.isfinite(tj).sum()), n)
    fit_k = fit_cdf_power_law(grid, np.log(Fk), cov_of(psi_k), k, int(np.isfinite(tk).sum()), n)
    fit_ratio = fit_cdf_power_law(
        grid, np.log(Fj) + np.log(Fk) - np.log(Fjk), cov_of(psi_j + psi_k - psi_jk),
        f"{j}*{k}/{j}&{k}", n_both, n,
    )
    fit_cond = fit_cdf_power_law(
        grid, np.log(Fjk) - np.log(Fk), cov_of(psi_jk - psi_k), f"{j}|{k}", n_both, n
    )
    return CurveFits(grid, fit_j, fit_k, fit_ratio, fit_cond)


@dataclass(frozen=True)
class HiddenStepEstimate:
    q0: float
    lam0: float
    se_q0: float
    se_log_lam0: float
    qj: float
    qk: float
    q0_alt: Optional[float] = None
    se_q0_alt: Optional[float] = None


def _log_kappa_jk(q0, qj, qk):
    for q in (q0, qj, qk):
        if not q > -1:
            raise DetectionError(f"recovered powers must be > -1, got q0={q0}, qj={qj}, qk={qk}")
    return math.log(coeff_kappa(q0, qj, qk)[2])


def recover_hidden_step(
    fit_j: FitResult, fit_k: FitResult, fit_ratio: FitResult, fit_cond: FitResult | None = None
) -> HiddenStepEstimate:
    """Recover ``(q0, lam0)`` of the unobserved first step.

    ``fit_j`` and ``fit_k`` describe F_j ~ lam t^(q0+qj+2) and F_k; ``fit_ratio``
    describes F_j F_k / F_jk = lam0 kappa_jk t^(q0+1).  So q0 is the ratio's
    fitted power and lam0 = ratio level / kappa_jk(q0, qj, qk).  When the fit
    of F_jk / F_k (power qj + 1) is given, q0 is also returned from the second
    route: power of F_j minus power of F_{j|k}.  Standard errors use the delta
    method, treating the fits as independent.
    """
    for fit in (fit_j, fit_k, fit_ratio) + ((fit_cond,) if fit_cond else ()):
        if not fit.converged:
            raise DetectionError(f"fit for {fit.disease!r} did not converge")
    q0 = fit_ratio.q
    # F_j power (q+1) = q0 + qj + 2
    qj = fit_j.q - q0 - 1.0
    qk = fit_k.q - q0 - 1.0
    log_lam0 = fit_ratio.log_lam - _log_kappa_jk(q0, qj, qk)

    # d log lam0 / d(q_ratio, q_j, q_k) by central differences
    h = 1e-6

    def f(qr, qfj, qfk):
        return -_log_kappa_jk(qr, qfj - qr - 1.0, qfk - qr - 1.0)

    g_r = (f(q0 + h, fit_j.q, fit_k.q) - f(q0 - h, fit_j.q, fit_k.q)) / (2 * h)
    g_j = (f(q0, fit_j.q + h, fit_k.q) - f(q0, fit_j.q - h, fit_k.q)) / (2 * h)
    g_k = (f(q0, fit_j.q, fit_k.q + h) - f(q0, fit_j.q, fit_k.q - h)) / (2 * h)
    var = (
        fit_ratio.se_log_lam**2
        + 2 * g_r * fit_ratio.cov_q_log_lam
        + g_r**2 * fit_ratio.se_q**2
        + g_j**2 * fit_j.se_q**2
        + g_k**2 * fit_k.se_q**2
    )
    q0_alt = se_alt = None
    if fit_cond is not None:
        q0_alt = (fit_j.q + 1.0) - (fit_cond.q + 1.0) - 1.0
        se_alt = math.hypot(fit_j.se_q, fit_cond.se_q)
    return HiddenStepEstimate(
        q0=float(q0),
        lam0=float(math.exp(log_lam0)),
        se_q0=float(fit_ratio.se_q),
        se_log_lam0=float(math.sqrt(max(var, 0.0))),
        qj=float(qj),
        qk=float(qk),
        q0_alt=q0_alt,
        se_q0_alt=se_alt,
    )
