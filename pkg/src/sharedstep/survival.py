"""Estimation from left-truncated, right-censored event tables."""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .simulate import EventTable

__all__ = [
    "SurvivalError",
    "InsufficientDataError",
    "ConvergenceError",
    "CumHazardCurve",
    "LogLogPoints",
    "FitResult",
    "nelson_aalen",
    "loglog_points",
    "loglog_slope",
    "power_law_loglik",
    "fit_power_law_mle",
    "read_curve_csv",
    "read_fit_json",
    "read_fit_csv",
]


class SurvivalError(ValueError):
    pass


class InsufficientDataError(SurvivalError):
    pass


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class CumHazardCurve:
    disease: str
    age: np.ndarray
    H: np.ndarray
    var_H: np.ndarray
    at_risk: np.ndarray | None = None
    events: np.ndarray | None = None

    def __len__(self):
        return len(self.age)

    def to_csv(self, path=None):
        frame = pd.DataFrame({"age": self.age, "H": self.H, "var_H": self.var_H})
        text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        if path is None:
            return text
        Path(path).write_text(text)


def read_curve_csv(source, disease: str = "") -> CumHazardCurve:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    frame = pd.read_csv(source, dtype=np.float64, float_precision="round_trip")
    if tuple(frame.columns) != ("age", "H", "var_H"):
        raise SurvivalError("expected header age,H,var_H")
    return CumHazardCurve(disease, frame["age"].to_numpy(), frame["H"].to_numpy(), frame["var_H"].to_numpy())


def _records(table: EventTable, disease: str | None):
    if disease is not None:
        table = table.select(disease)
        name = disease
    else:
        codes = np.unique(table.disease)
        if codes.size > 1:
            raise SurvivalError("table holds several diseases; name the one to analyse")
        name = table.names[codes[0]] if codes.size else ""
    if len(table) == 0:
        raise SurvivalError(f"no records for disease {name!r}")
    entry, exit_, event = table.entry, table.exit, table.event
    empty = exit_ <= entry
    if empty.any():
        warnings.warn(
            f"dropping {int(empty.sum())} record(s) with exit_age == entry_age (no time at risk)",
            stacklevel=3,
        )
        keep = ~empty
        entry, exit_, event = entry[keep], exit_[keep], event[keep]
    return name, entry, exit_, event


def nelson_aalen(table: EventTable, disease: str | None = None) -> CumHazardCurve:
    """Nelson-Aalen cumulative hazard with delayed entry.

    The risk set at age ``t`` holds the records with ``entry < t <= exit``.
    Tied event ages are pooled.  The variance is the counting-process
    estimate sum d / n^2.
    """
    name, entry, exit_, event = _records(table, disease)
    ages, d = np.unique(exit_[event], return_counts=True)
    ex_sorted = np.sort(exit_)
    en_sorted = np.sort(entry)
    n_total = len(exit_)
    n_exit_ge = n_total - np.searchsorted(ex_sorted, ages, side="left")
    n_entry_ge = n_total - np.searchsorted(en_sorted, ages, side="left")
    n = n_exit_ge - n_entry_ge
    H = np.cumsum(d / n)
    var = np.cumsum(d / n.astype(float) ** 2)
    return CumHazardCurve(name, ages, H, var, n, d)


@dataclass(frozen=True, eq=False)
class LogLogPoints:
    log_age: np.ndarray
    log_H: np.ndarray
    dropped: int

    def __len__(self):
        return len(self.log_age)


def loglog_points(curve: CumHazardCurve) -> LogLogPoints:
    """Natural-log pairs (log age, log H), dropping points with age or H <= 0."""
    ok = (curve.age > 0) & (curve.H > 0)
    return LogLogPoints(np.log(curve.age[ok]), np.log(curve.H[ok]), int((~ok).sum()))


def loglog_slope(points: LogLogPoints) -> tuple[float, float]:
    """Least-squares ``(slope, intercept)`` of log H on log age."""
    if len(points) < 2:
        raise InsufficientDataError("need at least two points for a slope")
    slope, intercept = np.polyfit(points.log_age, points.log_H, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class FitResult:
    """Power-law hazard fit h(t) = lam (q+1) t^q."""

    q: float
    lam: float
    se_q: float
    se_log_lam: float
    cov_q_log_lam: float
    log_likelihood: float
    n_events: int
    n_at_risk: int
    disease: str = ""
    ref_age: float = 1.0
    converged: bool = True
    iterations: int = 0

    @property
    def log_lam(self) -> float:
        return math.log(self.lam)

    def log_hazard(self, age: float) -> tuple[float, float]:
        """log h(age) and its delta-method standard error."""
        la = math.log(age)
        val = self.log_lam + math.log(self.q + 1.0) + self.q * la
        dq = 1.0 / (self.q + 1.0) + la
        var = dq * dq * self.se_q**2 + 2.0 * dq * self.cov_q_log_lam + self.se_log_lam**2
        return val, math.sqrt(max(var, 0.0))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_dict(), indent=2)
        if path is None:
            return text
        Path(path).write_text(text + "\n")

    def to_csv(self, path=None) -> str | None:
        frame = pd.DataFrame([self.to_dict()])
        text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        if path is None:
            return text
        Path(path).write_text(text)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise SurvivalError(f"unknown fit field(s) {sorted(unknown)}")
        return cls(**d)


def read_fit_json(source) -> FitResult:
    text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
    return FitResult.from_dict(json.loads(text))


def read_fit_csv(source) -> FitResult:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    frame = pd.read_csv(source, keep_default_na=False, dtype={"disease": str}, float_precision="round_trip")
    if len(frame) != 1:
        raise SurvivalError("fit CSV must hold exactly one row")
    row = frame.iloc[0].to_dict()
    for key in ("n_events", "n_at_risk", "iterations"):
        row[key] = int(row[key])
    row["converged"] = str(row["converged"]).lower() in ("true", "1")
    row["disease"] = str(row["disease"])
    for key in ("q", "lam", "se_q", "se_log_lam", "cov_q_log_lam", "log_likelihood", "ref_age"):
        row[key] = float(row[key])
    return FitResult.from_dict(row)


# ---------------------------------------------------------------- power law


class _PowerLawData:
    """Sufficient pieces of the log-likelihood in units of ``tau``."""

    def __init__(self, entry, exit_, event):
        self.D = int(event.sum())
        self.tau = float(np.exp(np.mean(np.log(exit_[event]))))
        self.y = exit_ / self.tau
        z = entry / self.tau
        self.z = z[z > 0]
        self.log_y = np.log(self.y)
        self.log_z = np.log(self.z)
        self.S = float(np.sum(self.log_y[event]))

    def _moments(self, q):
        p = q + 1.0
        wy = np.exp(p * self.log_y)
        wz = np.exp(p * self.log_z)
        A = np.sum(wy) - np.sum(wz)
        A1 = np.dot(wy, self.log_y) - np.dot(wz, self.log_z)
        A2 = np.dot(wy, self.log_y**2) - np.dot(wz, self.log_z**2)
        return A, A1, A2

    def loglik(self, q, a):
        if not q > -1:
            return -math.inf
        A, _, _ = self._moments(q)
        return self.D * (a + math.log(q + 1.0)) + q * self.S - math.exp(a) * A

    def derivatives(self, q, a):
        A, A1, A2 = self._moments(q)
        ea = math.exp(a)
        ll = self.D * (a + math.log(q + 1.0)) + q * self.S - ea * A
        g = np.array([self.D / (q + 1.0) + self.S - ea * A1, self.D - ea * A])
        H = np.array(
            [[-self.D / (q + 1.0) ** 2 - ea * A2, -ea * A1], [-ea * A1, -ea * A]]
        )
        return ll, g, H


def power_law_loglik(table: EventTable, q: float, lam: float, disease: str | None = None) -> float:
    """Left-truncated log-likelihood of h(t) = lam (q+1) t^q in original units."""
    _, entry, exit_, event = _records(table, disease)
    t = exit_[event]
    return float(
        event.sum() * math.log(lam * (q + 1.0))
        + q * np.sum(np.log(t))
        - lam * np.sum(exit_ ** (q + 1.0) - entry ** (q + 1.0))
    )


def _initial_point(data: _PowerLawData, entry, exit_, event):
    ages, d = np.unique(exit_[event], return_counts=True)
    n = (len(exit_) - np.searchsorted(np.sort(exit_), ages, "left")) - (
        len(entry) - np.searchsorted(np.sort(entry), ages, "left")
    )
    H = np.cumsum(d / n)
    q = 1.0
    if len(ages) >= 2 and np.ptp(np.log(ages)) > 0:
        slope, _ = np.polyfit(np.log(ages / data.tau), np.log(H), 1)
        if np.isfinite(slope) and slope > 0.05:
            q = float(slope) - 1.0
    q = min(max(q, -0.9), 50.0)
    A, _, _ = data._moments(q)
    return q, math.log(data.D / A)


def fit_power_law_mle(
    table: EventTable,
    disease: str | None = None,
    gtol: float = 1e-8,
    max_iter: int = 200,
) -> FitResult:
    """Maximum-likelihood fit of h(t) = lam (q+1) t^q with delayed entry.

    Newton ascent in ``(q, log lam)`` on ages rescaled by the geometric mean
    event age, started from the log-log least-squares line of the
    Nelson-Aalen curve.  Standard errors come from the observed information.
    """
    name, entry, exit_, event = _records(table, disease)
    if event.sum() < 2:
        raise InsufficientDataError(f"need at least 2 events for {name!r}, got {int(event.sum())}")
    data = _PowerLawData(entry, exit_, event)
    q, a = _initial_point(data, entry, exit_, event)
    ll, g, H = data.derivatives(q, a)
    it = 0
    history = []
    while np.linalg.norm(g) >= gtol:
        if it >= max_iter:
            raise ConvergenceError(
                f"power-law fit for {name!r} did not converge in {max_iter} iterations: "
                f"q={q:.6g}, log-lam(scaled)={a:.6g}, |grad|={np.linalg.norm(g):.3g}, "
                f"events={data.D}, recent |grad|={history[-5:]}"
            )
        it += 1
        try:
            step = np.linalg.solve(H, -g)
            newton = float(np.dot(step, g)) > 0
        except np.linalg.LinAlgError:
            newton = False
        if not newton:
            # steepest ascent scaled by the diagonal curvature
            step = g / np.maximum(np.abs(np.diag(H)), 1e-12)
        t = 1.0
        while True:
            qn, an = q + t * step[0], a + t * step[1]
            lln = data.loglik(qn, an)
            if lln >= ll - 1e-12 * abs(ll) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            # no ascent possible along the step: stationary to working precision
            if np.linalg.norm(g) < 1e-6 * max(1.0, data.D):
                break
            raise ConvergenceError(
                f"power-law fit for {name!r} stalled at q={q:.6g}, |grad|={np.linalg.norm(g):.3g}"
            )
        q, a = qn, an
        ll, g, H = data.derivatives(q, a)
        history.append(float(np.linalg.norm(g)))
        if it > 3 and abs(step[0]) * t < 1e-15 * max(1.0, abs(q)) and abs(step[1]) * t < 1e-15 * max(1.0, abs(a)):
            if np.linalg.norm(g) < 1e-6 * max(1.0, data.D):
                break
    try:
        cov_s = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        raise ConvergenceError(f"singular information matrix for {name!r}") from None
    log_tau = math.log(data.tau)
    J = np.array([[1.0, 0.0], [-log_tau, 1.0]])
    cov = J @ cov_s @ J.T
    log_lam = a - (q + 1.0) * log_tau
    return FitResult(
        q=float(q),
        lam=math.exp(log_lam),
        se_q=math.sqrt(max(cov[0, 0], 0.0)),
        se_log_lam=math.sqrt(max(cov[1, 1], 0.0)),
        cov_q_log_lam=float(cov[0, 1]),
        log_likelihood=float(ll - data.D * log_tau),
        n_events=data.D,
        n_at_risk=int(len(exit_)),
        disease=name,
        ref_age=data.tau,
        converged=True,
        iterations=it,
    )
