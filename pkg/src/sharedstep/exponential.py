"""Closed forms for constant-hazard steps.

Times are measured in units of the first step's mean waiting time: with
first-step rate ``lam0`` the rescaled age is ``lam0 * t`` and second-step rates
become ``lam_j / lam0``.  Functions taking ``lam0`` work in original units and
rescale internally; the others take rescaled quantities.

The closed forms have removable singularities (``lam_j = 1``,
``m * mean(lam) = 1``, ``lam_j + lam_k = 1``).  They are evaluated through
:func:`~sharedstep.numeric.exp_difference_quotient`, which switches to a
Taylor series next to the singular point, and for small ages through a power
series that avoids the cancellation between nearly equal terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numeric import exp_difference_quotient, integrate

__all__ = [
    "ExpSharedModel",
    "exp_disease_cdf",
    "exp_prob_zero_shared",
    "exp_prob_zero_indep",
    "exp_expected_n",
    "exp_expected_n_given_positive",
    "exp_joint",
    "exp_conditional_joint",
    "ConditionalJoint",
    "exp_small_t_marginal",
    "exp_small_t_joint",
    "exp_small_t_ratio",
    "conditional_crossover_age",
]

# Rescaled age * largest rate below which the power series is used.
_SERIES_LIMIT = 0.25
_SERIES_TERMS = 60
# Below this joint / (F_j + F_k) the closed-form difference is replaced by quadrature.
_CANCELLATION = 1e-2


def _check(t, *rates):
    if not t >= 0:
        raise ValueError(f"age must be >= 0, got {t}")
    for r in rates:
        if not r > 0:
            raise ValueError(f"rates must be > 0, got {r}")


def _cdf_series(lam: float, t: float) -> float:
    # F(t) = sum_{N>=2} (-1)^N t^N / N! * sum_{n=1}^{N-1} lam^n
    total, inner, lam_pow, term = 0.0, 0.0, 1.0, t
    for N in range(2, _SERIES_TERMS):
        lam_pow *= lam
        inner += lam_pow
        term *= t / N
        contrib = term * inner if N % 2 == 0 else -term * inner
        total += contrib
        if abs(contrib) < 1e-18 * abs(total):
            break
    return total


def _joint_series(a: float, b: float, t: float) -> float:
    # sum_{N>=3} (-1)^(N-1) t^N / N! * sum_{n=2}^{N-1} w_n,
    # w_n = (a+b)^n - a^n - b^n = (a+b) w_{n-1} + a^{n-1} b + a b^{n-1}
    total, inner, w = 0.0, 0.0, 0.0
    pa, pb = 1.0, 1.0
    term = t * t / 2.0
    for N in range(3, _SERIES_TERMS):
        pa *= a
        pb *= b
        w = (a + b) * w + pa * b + a * pb
        inner += w
        term *= t / N
        contrib = term * inner if N % 2 == 1 else -term * inner
        total += contrib
        if abs(contrib) < 1e-18 * abs(total):
            break
    return total


def exp_disease_cdf(lam_j: float, t: float) -> float:
    """P(disease j by rescaled age t) = 1 - (e^{-lam t} - lam e^{-t}) / (1 - lam)."""
    _check(t, lam_j)
    if t == 0:
        return 0.0
    if t * max(1.0, lam_j) < _SERIES_LIMIT:
        return _cdf_series(lam_j, t)
    # (1 - e^{-t}) - (e^{-lam t} - e^{-t}) / (1 - lam)
    return -math.expm1(-t) - exp_difference_quotient(lam_j, 1.0, t)


def exp_prob_zero_shared(lams: Sequence[float], t: float) -> float:
    """P(N = 0) with a shared first step, rescaled units."""
    lams = list(lams)
    _check(t, *lams)
    total = math.fsum(lams)
    # e^{-t} + (e^{-m lbar t} - e^{-t}) / (1 - m lbar)
    return math.exp(-t) + exp_difference_quotient(total, 1.0, t)


def exp_prob_zero_indep(lams: Sequence[float], t: float) -> float:
    """prod_j (1 - F_j(t)) for independent two-step chains, rescaled units."""
    lams = list(lams)
    _check(t, *lams)
    return math.prod(1.0 - exp_disease_cdf(l, t) for l in lams)


def exp_expected_n(lams: Sequence[float], t: float) -> float:
    return math.fsum(exp_disease_cdf(l, t) for l in lams)


def exp_expected_n_given_positive(lams: Sequence[float], t: float, shared: bool = True) -> float:
    p0 = exp_prob_zero_shared(lams, t) if shared else exp_prob_zero_indep(lams, t)
    if p0 >= 1.0:
        raise ArithmeticError(f"no disease can have occurred by t={t}")
    return exp_expected_n(lams, t) / (1.0 - p0)


def exp_joint(lam_j: float, lam_k: float, t: float) -> float:
    """P(X_j = 1, X_k = 1) = F_{lam_j} + F_{lam_k} - F_{lam_j + lam_k}, rescaled units."""
    _check(t, lam_j, lam_k)
    if t == 0:
        return 0.0
    if t * max(1.0, lam_j + lam_k) < _SERIES_LIMIT:
        return _joint_series(lam_j, lam_k, t)
    fa, fb = exp_disease_cdf(lam_j, t), exp_disease_cdf(lam_k, t)
    val = fa + fb - exp_disease_cdf(lam_j + lam_k, t)
    if val < _CANCELLATION * (fa + fb):
        # slow second steps: the difference loses most digits, integrate directly
        return integrate(
            lambda u: math.exp(u - t) * math.expm1(-lam_j * u) * math.expm1(-lam_k * u), 0.0, t
        )
    return val


@dataclass(frozen=True)
class ConditionalJoint:
    joint: float
    marginal_given: float
    conditional: float


def exp_conditional_joint(lam0: float, lam_j: float, lam_k: float, t: float) -> ConditionalJoint:
    """Joint probability of j and k by age ``t`` (original units), with its pieces.

    ``conditional`` is P(X_j = 1 | X_k = 1) = joint / P(X_k = 1).
    """
    _check(t, lam0, lam_j, lam_k)
    s = lam0 * t
    joint = exp_joint(lam_j / lam0, lam_k / lam0, s)
    marginal = exp_disease_cdf(lam_k / lam0, s)
    if marginal <= 0:
        raise ArithmeticError("conditional probability undefined: P(X_k = 1) is zero")
    return ConditionalJoint(joint, marginal, joint / marginal)


def exp_small_t_marginal(lam0: float, lam_j: float, t: float) -> float:
    """Quadratic approximation lam0 lam_j t^2 / 2; valid while t * max(lam) << 1."""
    return lam0 * lam_j * t * t / 2.0


def exp_small_t_joint(lam0: float, lam_j: float, lam_k: float, t: float) -> float:
    """Cubic approximation lam0 lam_j lam_k t^3 / 3 of the joint probability."""
    return lam0 * lam_j * lam_k * t**3 / 3.0


def exp_small_t_ratio(lam_k: float, t: float) -> float:
    """Leading-order joint / P(X_j = 1) = 2 lam_k t / 3."""
    return 2.0 * lam_k * t / 3.0


def conditional_crossover_age(lam_k: float) -> float:
    """Age 3 / (2 lam_k) where the leading-order ratio above reaches 1.

    Only meaningful while the small-age approximations hold, i.e. when
    ``lam0 * t`` and ``lam_k * t`` are small; numerically the leading-order
    ratio is within 5% of the exact one for ``lam0 t, lam_k t <~ 0.05``.
    """
    if not lam_k > 0:
        raise ValueError("lam_k must be > 0")
    return 1.5 / lam_k


@dataclass(frozen=True)
class ExpSharedModel:
    """Constant-hazard shared-step model in original units."""

    lam0: float
    lams: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lams", tuple(float(l) for l in self.lams))
        _check(0.0, self.lam0, *self.lams)
        if not self.lams:
            raise ValueError("need at least one disease")

    @property
    def m(self) -> int:
        return len(self.lams)

    @property
    def mean_rate(self) -> float:
        """Mean second-step rate in rescaled units (lam_j / lam0)."""
        return float(np.mean(self.scaled_rates))

    @property
    def scaled_rates(self) -> tuple[float, ...]:
        return tuple(l / self.lam0 for l in self.lams)

    def rescale(self, t: float) -> float:
        return self.lam0 * t

    def disease_cdf(self, j: int, t: float) -> float:
        return exp_disease_cdf(self.scaled_rates[j], self.rescale(t))

    def prob_zero_shared(self, t: float) -> float:
        return exp_prob_zero_shared(self.scaled_rates, self.rescale(t))

    def prob_zero_indep(self, t: float) -> float:
        return exp_prob_zero_indep(self.scaled_rates, self.rescale(t))

    def expected_n(self, t: float) -> float:
        return exp_expected_n(self.scaled_rates, self.rescale(t))

    def expected_n_given_positive(self, t: float, shared: bool = True) -> float:
        return exp_expected_n_given_positive(self.scaled_rates, self.rescale(t), shared)

    def joint(self, j: int, k: int, t: float) -> float:
        r = self.scaled_rates
        return exp_joint(r[j], r[k], self.rescale(t))
