"""Numerical helpers shared by the analytic routines.

Quadrature is backed by QUADPACK (``scipy.integrate.quad``) behind a small
contract: tolerances live in :class:`QuadratureSpec` and a failure to converge
raises :class:`QuadratureError` instead of returning a poor estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

from scipy import integrate as _integrate

__all__ = [
    "QuadratureError",
    "QuadratureSpec",
    "DEFAULT_QUADRATURE",
    "integrate",
    "log_gamma",
    "one_minus_exp_over",
    "exp_difference_quotient",
]

# Below this magnitude the expm1 quotient is replaced by its Taylor series.
SERIES_SWITCH = 1e-6


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_subdivisions: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be strictly positive")
        if int(self.max_subdivisions) < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    points: Iterable[float] | None = None,
) -> float:
    """Integrate ``f`` over ``[a, b]``.

    ``points`` are interior break points (kinks, support ends) handed to the
    adaptive scheme; points outside the open interval are ignored.
    """
    if b < a:
        raise ValueError(f"integration bounds reversed: a={a} > b={b}")
    if a == b:
        return 0.0
    brk = None
    if points is not None:
        brk = sorted({float(p) for p in points if a < p < b})
        brk = brk or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        value, err, info, *rest = _integrate.quad(
            f,
            a,
            b,
            epsabs=spec.abs_tol,
            epsrel=spec.rel_tol,
            limit=spec.max_subdivisions,
            points=brk,
            full_output=1,
        )
    ier = 0
    if rest:
        ier = 1
        # quad appends the message only when ier > 0
    if ier or not math.isfinite(value):
        tol = max(spec.abs_tol, spec.rel_tol * abs(value))
        # QUADPACK flags roundoff trouble even when the estimate is fine
        if math.isfinite(value) and err <= 10 * tol:
            return float(value)
        msg = rest[0] if rest else "non-finite result"
        raise QuadratureError(
            f"quadrature on [{a}, {b}] failed: value={value!r}, error estimate={err!r}"
            f" after {info.get('last', '?')} subintervals: {msg}"
        )
    return float(value)


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def one_minus_exp_over(x: float) -> float:
    """``(1 - exp(-x)) / x`` with the removable singularity at 0 filled in."""
    if abs(x) < SERIES_SWITCH:
        return 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    return -math.expm1(-x) / x


def exp_difference_quotient(a: float, b: float, t: float) -> float:
    """``(exp(-a t) - exp(-b t)) / (b - a)``, finite and smooth across ``a == b``."""
    lo = min(a, b)
    return t * math.exp(-lo * t) * one_minus_exp_over(abs(b - a) * t)
