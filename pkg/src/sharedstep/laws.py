"""Waiting-time laws for a single step of a multistage process."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["LawKind", "StepLaw", "step_cdf", "step_pdf", "step_survival"]


class LawKind(str, Enum):
    POWER_LAW_CDF = "PowerLawCdf"
    EXPONENTIAL = "Exponential"
    WEIBULL = "Weibull"


def _ages(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError(f"ages must be >= 0, got {t!r}")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


@dataclass(frozen=True)
class StepLaw:
    """Law of the waiting time for one step.

    ``PowerLawCdf``: F(t) = min(lam * t**(q+1), 1)
    ``Weibull``:     F(t) = 1 - exp(-lam * t**(q+1))
    ``Exponential``: F(t) = 1 - exp(-lam * t), with q fixed at 0
    """

    kind: LawKind
    lam: float
    q: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "q", float(self.q))
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"rate must be a finite positive number, got {self.lam}")
        if not (self.q > -1 and math.isfinite(self.q)):
            raise ValueError(f"power must be > -1, got {self.q}")
        if self.kind is LawKind.EXPONENTIAL and self.q != 0.0:
            raise ValueError("Exponential laws have q = 0 by convention")

    @classmethod
    def power_law(cls, lam: float, q: float) -> "StepLaw":
        return cls(LawKind.POWER_LAW_CDF, lam, q)

    @classmethod
    def exponential(cls, lam: float) -> "StepLaw":
        return cls(LawKind.EXPONENTIAL, lam, 0.0)

    @classmethod
    def weibull(cls, lam: float, q: float) -> "StepLaw":
        return cls(LawKind.WEIBULL, lam, q)

    @property
    def is_power_law(self) -> bool:
        return self.kind is LawKind.POWER_LAW_CDF

    @property
    def support_end(self) -> float:
        """Age at which the cdf reaches 1 (infinite except for power-law cdfs)."""
        if self.kind is LawKind.POWER_LAW_CDF:
            return self.lam ** (-1.0 / (self.q + 1.0))
        return math.inf

    def _exponent(self, t):
        return self.lam * t ** (self.q + 1.0)

    def cdf(self, t):
        a = _ages(t)
        if self.kind is LawKind.POWER_LAW_CDF:
            val = np.minimum(self._exponent(a), 1.0)
        else:
            val = -np.expm1(-self._exponent(a))
        return _out(val, t)

    def survival(self, t):
        a = _ages(t)
        if self.kind is LawKind.POWER_LAW_CDF:
            val = np.maximum(1.0 - self._exponent(a), 0.0)
        else:
            val = np.exp(-self._exponent(a))
        return _out(val, t)

    def pdf(self, t):
        a = _ages(t)
        q = self.q
        with np.errstate(divide="ignore"):
            base = self.lam * (q + 1.0) * a**q
        if self.kind is LawKind.POWER_LAW_CDF:
            val = np.where(a < self.support_end, base, 0.0)
        else:
            val = base * np.exp(-self._exponent(a))
        return _out(val, t)

    def inverse_cdf(self, u):
        """Age at which the cdf equals ``u``; vectorised over ``u`` in (0, 1)."""
        u = np.asarray(u, dtype=float)
        p = 1.0 / (self.q + 1.0)
        if self.kind is LawKind.POWER_LAW_CDF:
            val = (u / self.lam) ** p
        else:
            val = (-np.log1p(-u) / self.lam) ** p
        return float(val) if val.ndim == 0 else val

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "lambda": self.lam, "q": self.q}


def step_cdf(law: StepLaw, t):
    return law.cdf(t)


def step_pdf(law: StepLaw, t):
    return law.pdf(t)


def step_survival(law: StepLaw, t):
    return law.survival(t)
