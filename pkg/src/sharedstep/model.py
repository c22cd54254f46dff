"""Analytic engine for the shared-step model.

A shared first step (waiting time ``T0`` with law ``first``) must occur before
any disease; disease ``j`` then needs its own second step ``T_j`` (law
``second_j``), the second steps being independent given ``T0``.  Disease ``j``
has occurred by age ``t`` iff ``T0 + T_j <= t``.

The independent alternative gives every disease a private copy of the
two-step chain.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .laws import LawKind, StepLaw
from .numeric import DEFAULT_QUADRATURE, QuadratureSpec, integrate, log_gamma

__all__ = [
    "ModelError",
    "UnsupportedLawError",
    "UndefinedQuantityError",
    "SharedStepModel",
    "IndependentModel",
    "MomentReport",
    "coeff_c",
    "coeff_c_joint",
    "coeff_kappa",
    "disease_cdf",
    "disease_cdf_closed",
    "disease_cdf_numeric",
    "joint_cdf",
    "joint_cdf_closed",
    "joint_cdf_numeric",
    "conditional_cdf",
    "first_step_ratio",
    "generating_function",
    "expected_n",
    "variance_n",
    "variance_n_indep",
    "prob_zero",
    "prob_zero_indep",
    "expected_n_given_positive",
    "moment_report",
    "load_model",
    "model_from_dict",
]


class ModelError(ValueError):
    """Invalid model specification or argument."""


class UnsupportedLawError(ModelError):
    """A closed form was requested for laws it does not cover."""


class UndefinedQuantityError(ArithmeticError):
    """A ratio or conditional quantity has a zero denominator."""


@dataclass(frozen=True)
class SharedStepModel:
    first: StepLaw
    diseases: tuple[tuple[str, StepLaw], ...]

    def __post_init__(self):
        diseases = tuple((str(n), law) for n, law in self.diseases)
        object.__setattr__(self, "diseases", diseases)
        names = [n for n, _ in diseases]
        if len(set(names)) != len(names):
            raise ModelError(f"disease names must be unique: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.diseases)

    def second(self, name: str) -> StepLaw:
        for n, law in self.diseases:
            if n == name:
                return law
        raise ModelError(f"unknown disease {name!r}; model has {list(self.names)}")

    def chain(self, name: str) -> tuple[StepLaw, StepLaw]:
        return self.first, self.second(name)

    @property
    def all_power_law(self) -> bool:
        return self.first.is_power_law and all(l.is_power_law for _, l in self.diseases)

    def independent(self) -> "IndependentModel":
        """The independent-disease model with the same marginal chains."""
        return IndependentModel(tuple((n, self.first, law) for n, law in self.diseases))

    def to_dict(self) -> dict:
        return {
            "first": self.first.to_dict(),
            "diseases": [{"name": n, **law.to_dict()} for n, law in self.diseases],
        }


@dataclass(frozen=True)
class IndependentModel:
    diseases: tuple[tuple[str, StepLaw, StepLaw], ...]

    def __post_init__(self):
        diseases = tuple((str(n), a, b) for n, a, b in self.diseases)
        object.__setattr__(self, "diseases", diseases)
        names = [d[0] for d in diseases]
        if len(set(names)) != len(names):
            raise ModelError(f"disease names must be unique: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d[0] for d in self.diseases)

    def chain(self, name: str) -> tuple[StepLaw, StepLaw]:
        for n, a, b in self.diseases:
            if n == name:
                return a, b
        raise ModelError(f"unknown disease {name!r}; model has {list(self.names)}")


Model = Union[SharedStepModel, IndependentModel]


@dataclass(frozen=True)
class MomentReport:
    t: float
    expected_n: float
    variance_n: float
    prob_zero: float
    expected_n_given_positive: float


# ---------------------------------------------------------------- JSON schema

_LAW_KEYS = {"kind", "lambda", "q"}


def _law_from_dict(d: dict, where: str, extra: frozenset = frozenset()) -> StepLaw:
    if not isinstance(d, dict):
        raise ModelError(f"{where}: expected an object")
    unknown = set(d) - _LAW_KEYS - extra
    if unknown:
        raise ModelError(f"{where}: unknown field(s) {sorted(unknown)}")
    if "kind" not in d or "lambda" not in d:
        raise ModelError(f"{where}: 'kind' and 'lambda' are required")
    try:
        kind = LawKind(d["kind"])
    except ValueError:
        raise ModelError(
            f"{where}: kind must be one of {[k.value for k in LawKind]}, got {d['kind']!r}"
        ) from None
    q = d.get("q", 0.0)
    for key, val in (("lambda", d["lambda"]), ("q", q)):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ModelError(f"{where}: {key} must be a number")
    try:
        return StepLaw(kind, d["lambda"], q)
    except ValueError as exc:
        raise ModelError(f"{where}: {exc}") from None


def model_from_dict(doc: dict) -> SharedStepModel:
    """Build a model from ``{"first": {...}, "diseases": [{"name", ...}, ...]}``."""
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    unknown = set(doc) - {"first", "diseases"}
    if unknown:
        raise ModelError(f"unknown top-level field(s) {sorted(unknown)}")
    if "first" not in doc or "diseases" not in doc:
        raise ModelError("model document needs 'first' and 'diseases'")
    first = _law_from_dict(doc["first"], "first")
    if not isinstance(doc["diseases"], list):
        raise ModelError("'diseases' must be a list")
    diseases = []
    for i, d in enumerate(doc["diseases"]):
        where = f"diseases[{i}]"
        if not isinstance(d, dict) or not isinstance(d.get("name"), str) or not d["name"]:
            raise ModelError(f"{where}: a non-empty string 'name' is required")
        diseases.append((d["name"], _law_from_dict(d, where, frozenset({"name"}))))
    return SharedStepModel(first, tuple(diseases))


def load_model(path) -> SharedStepModel:
    with open(Path(path)) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)


# -------------------------------------------------------- closed-form pieces


def _check_powers(*qs):
    for q in qs:
        if not q > -1:
            raise ModelError(f"powers must be > -1, got {q}")


def _log_factorial(x: float) -> float:
    return log_gamma(x + 1.0)


def coeff_c(q0: float, qa: float) -> float:
    """(q0+1)! (qa+1)! / (q0+qa+2)!, factorials generalised through Gamma."""
    _check_powers(q0, qa)
    return math.exp(_log_factorial(q0 + 1) + _log_factorial(qa + 1) - _log_factorial(q0 + qa + 2))


def coeff_c_joint(q0: float, qj: float, qk: float) -> float:
    """(q0+1)! (qj+qk+2)! / (q0+qj+qk+3)!."""
    _check_powers(q0, qj, qk)
    return math.exp(
        _log_factorial(q0 + 1) + _log_factorial(qj + qk + 2) - _log_factorial(q0 + qj + qk + 3)
    )


def coeff_kappa(q0: float, qj: float, qk: float) -> tuple[float, float, float]:
    """Return ``(kappa_j, kappa_k, kappa_jk)`` = (c_jk/c_j, c_jk/c_k, c_j c_k/c_jk)."""
    _check_powers(q0, qj, qk)
    lc_j = math.log(coeff_c(q0, qj))
    lc_k = math.log(coeff_c(q0, qk))
    lc_jk = math.log(coeff_c_joint(q0, qj, qk))
    return math.exp(lc_jk - lc_j), math.exp(lc_jk - lc_k), math.exp(lc_j + lc_k - lc_jk)


def _check_age(t: float) -> float:
    t = float(t)
    if not t >= 0:
        raise ValueError(f"age must be >= 0, got {t}")
    return t


def _closed_ok(model: SharedStepModel, t: float, *names: str) -> bool:
    if not isinstance(model, SharedStepModel):
        return False
    laws = [model.first] + [model.second(n) for n in names]
    return all(l.is_power_law for l in laws) and all(t <= l.support_end for l in laws)


def disease_cdf_closed(model: SharedStepModel, disease: str, t: float) -> float:
    """lam0 lamj c_j(q0, qj) t^(q0+qj+2), exact while t is inside both supports."""
    t = _check_age(t)
    return _chain_cdf_closed(model.first, model.second(disease), t)


def _chain_cdf_closed(f0: StepLaw, fj: StepLaw, t: float) -> float:
    if not (f0.is_power_law and fj.is_power_law):
        raise UnsupportedLawError(
            "closed-form disease cdf needs PowerLawCdf laws; use disease_cdf_numeric"
        )
    val = f0.lam * fj.lam * coeff_c(f0.q, fj.q) * t ** (f0.q + fj.q + 2)
    return min(val, 1.0)


def joint_cdf_closed(model: SharedStepModel, j: str, k: str, t: float) -> float:
    """lam0 lamj lamk c_jk t^(q0+qj+qk+3)."""
    t = _check_age(t)
    if j == k:
        raise ModelError("joint cdf needs two distinct diseases")
    f0, fj, fk = model.first, model.second(j), model.second(k)
    if not (f0.is_power_law and fj.is_power_law and fk.is_power_law):
        raise UnsupportedLawError("closed-form joint cdf needs PowerLawCdf laws")
    val = f0.lam * fj.lam * fk.lam * coeff_c_joint(f0.q, fj.q, fk.q) * t ** (f0.q + fj.q + fk.q + 3)
    return min(val, 1.0)


# ----------------------------------------------------------- convolutions


def _first_step_integral(first: StepLaw, seconds: Sequence[StepLaw], t, g, spec):
    """Integrate f0(s) * g(s) over [0, t], breaking at support ends."""
    upper = min(t, first.support_end)
    pts = [t - l.support_end for l in seconds if math.isfinite(l.support_end)]
    if upper <= 0:
        return 0.0
    return integrate(lambda s: first.pdf(s) * g(s), 0.0, upper, spec, points=pts)


def disease_cdf_numeric(
    first: StepLaw, second: StepLaw, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """Quadrature of the convolution int_0^t f0(s) F_0j(t - s) ds."""
    t = _check_age(t)
    if t == 0:
        return 0.0
    val = _first_step_integral(first, [second], t, lambda s: second.cdf(t - s), spec)
    return min(max(val, 0.0), 1.0)


def joint_cdf_numeric(
    model: SharedStepModel, j: str, k: str, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    t = _check_age(t)
    if j == k:
        raise ModelError("joint cdf needs two distinct diseases")
    if isinstance(model, IndependentModel):
        return disease_cdf(model, j, t, spec) * disease_cdf(model, k, t, spec)
    if t == 0:
        return 0.0
    fj, fk = model.second(j), model.second(k)
    val = _first_step_integral(
        model.first, [fj, fk], t, lambda s: fj.cdf(t - s) * fk.cdf(t - s), spec
    )
    return min(max(val, 0.0), 1.0)


def disease_cdf(model: Model, disease: str, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Probability that ``disease`` has occurred by age ``t``.

    Uses the closed form whenever it is exact, quadrature otherwise.
    """
    t = _check_age(t)
    first, second = model.chain(disease)
    if first.is_power_law and second.is_power_law and t <= min(first.support_end, second.support_end):
        return _chain_cdf_closed(first, second, t)
    return disease_cdf_numeric(first, second, t, spec)


def joint_cdf(
    model: Model, j: str, k: str, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE,
    method: str = "auto",
) -> float:
    """Probability that both ``j`` and ``k`` have occurred by age ``t``."""
    t = _check_age(t)
    if j == k:
        raise ModelError("joint cdf needs two distinct diseases")
    if method == "closed":
        return joint_cdf_closed(model, j, k, t)
    if method not in ("auto", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto" and _closed_ok(model, t, j, k):
        return joint_cdf_closed(model, j, k, t)
    return joint_cdf_numeric(model, j, k, t, spec)


def conditional_cdf(
    model: Model, target: str, given: str, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """F_{target|given}(t) = F_{target,given}(t) / F_given(t)."""
    fg = disease_cdf(model, given, t, spec)
    if fg <= 0:
        raise UndefinedQuantityError(
            f"conditional cdf undefined: P({given} by t={t}) is zero"
        )
    return joint_cdf(model, target, given, t, spec) / fg


def first_step_ratio(
    model: Model, j: str, k: str, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """F_j F_k / F_jk, which scales as lam0 t^(q0+1) kappa_jk for power laws."""
    fjk = joint_cdf(model, j, k, t, spec)
    if fjk <= 0:
        raise UndefinedQuantityError(f"ratio undefined: joint cdf is zero at t={t}")
    return disease_cdf(model, j, t, spec) * disease_cdf(model, k, t, spec) / fjk


# ------------------------------------------------------------------ moments


def generating_function(
    model: SharedStepModel, s: float, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """G(s) = sum_N e^{sN} P(N) for the disease count N at age t."""
    t = _check_age(t)
    first = model.first
    seconds = [law for _, law in model.diseases]
    es = math.exp(s)

    def integrand(u):
        prod = 1.0
        for law in seconds:
            F = law.cdf(t - u)
            prod *= 1.0 - F + es * F
        return prod

    return first.survival(t) + _first_step_integral(first, seconds, t, integrand, spec)


def expected_n(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """E[N] = sum_j F_j(t); identical for shared and independent models."""
    return math.fsum(disease_cdf(model, n, t, spec) for n in model.names)


def variance_n_indep(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """sum_j F_j (1 - F_j), the variance when diseases are independent."""
    fs = [disease_cdf(model, n, t, spec) for n in model.names]
    return math.fsum(F * (1.0 - F) for F in fs)


def variance_n(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Var(N) at age ``t`` for either model class.

    For the shared model the covariance terms are
    sum_{j != k} [ int f0 F_0j F_0k - F_j F_k ].
    """
    if isinstance(model, IndependentModel):
        return variance_n_indep(model, t, spec)
    t = _check_age(t)
    names = model.names
    fs = {n: disease_cdf_numeric(model.first, model.second(n), t, spec) for n in names}
    terms = [F * (1.0 - F) for F in fs.values()]
    for j, k in combinations(names, 2):
        fjk = joint_cdf_numeric(model, j, k, t, spec)
        terms.append(2.0 * (fjk - fs[j] * fs[k]))
    return max(math.fsum(terms), 0.0)


def prob_zero_indep(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """prod_j S_j(t)."""
    return float(np.prod([1.0 - disease_cdf(model, n, t, spec) for n in model.names]))


def prob_zero(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """P(N = 0) = S_0(t) + int_0^t f0(s) prod_j S_0j(t - s) ds for the shared model."""
    if isinstance(model, IndependentModel):
        return prob_zero_indep(model, t, spec)
    t = _check_age(t)
    seconds = [law for _, law in model.diseases]

    def survive_all(u):
        prod = 1.0
        for law in seconds:
            prod *= law.survival(t - u)
        return prod

    val = model.first.survival(t) + _first_step_integral(model.first, seconds, t, survive_all, spec)
    return min(max(val, 0.0), 1.0)


def expected_n_given_positive(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """E[N | N > 0] = E[N] / (1 - P(N = 0))."""
    p_pos = 1.0 - prob_zero(model, t, spec)
    if p_pos <= 0:
        raise UndefinedQuantityError(f"no disease can have occurred by t={t}")
    return expected_n(model, t, spec) / p_pos


def moment_report(model: Model, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> MomentReport:
    p0 = prob_zero(model, t, spec)
    en = expected_n(model, t, spec)
    cond = en / (1.0 - p0) if p0 < 1 else math.nan
    return MomentReport(t, en, variance_n(model, t, spec), p0, cond)
