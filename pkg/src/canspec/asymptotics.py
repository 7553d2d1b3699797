"""Leading-order power-log asymptotics near a singular endpoint.

Coefficients of interest behave like  c * t^beta * |ln t|^m  as t -> 0
(t is the distance to the endpoint, c > 0).  Tracking only (beta, m) is
enough to decide convergence of the iterated integrals and weighted-L2
memberships that drive the endpoint classification.  Decisions carry a
three-valued verdict so that marginal cases (exactly log-divergent
integrals, or fitted exponents inside the indeterminacy band) can be
reported instead of silently guessed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

# half-width of the indeterminacy band around the convergence threshold,
# used for exponents obtained from numeric fits
EXPONENT_BAND = 0.05

# tolerance for treating an exponent as sitting exactly on the threshold
_EXACT = 1e-12


class Verdict(Enum):
    CONVERGES = "converges"
    DIVERGES = "diverges"
    MARGINAL = "marginal"  # on the threshold; log-scale behaviour decides


@dataclass(frozen=True)
class PowerLog:
    """Leading behaviour t^beta * |ln t|^m (positive constant suppressed)."""

    beta: float
    m: float = 0.0

    def __mul__(self, other):
        return PowerLog(self.beta + other.beta, self.m + other.m)

    def integral_verdict(self):
        """Convergence of  int_0 t^beta |ln t|^m dt."""
        if self.beta > -1.0 + _EXACT:
            return Verdict.CONVERGES
        if self.beta < -1.0 - _EXACT:
            return Verdict.DIVERGES
        return Verdict.CONVERGES if self.m < -1.0 - _EXACT else Verdict.MARGINAL


def integrate_from_endpoint(p):
    """Asymptotics of F(t) = int_0^t p  (requires convergence).

    Returns (PowerLog, Verdict); on divergence the PowerLog is None.
    """
    v = p.integral_verdict()
    if v is Verdict.DIVERGES:
        return None, v
    if v is Verdict.MARGINAL:
        return None, v
    if abs(p.beta + 1.0) <= _EXACT:  # converges through the log power
        return PowerLog(0.0, p.m + 1.0), v
    return PowerLog(p.beta + 1.0, p.m), v


def integrate_to_base(p):
    """Asymptotics of G(t) = int_t^{t0} p as t -> 0.

    When the integral converges at the endpoint, G tends to a positive
    constant; otherwise its blow-up rate is returned.
    """
    if p.beta < -1.0 - _EXACT:
        return PowerLog(p.beta + 1.0, p.m)
    if abs(p.beta + 1.0) <= _EXACT:
        if p.m > -1.0 + _EXACT:
            return PowerLog(0.0, p.m + 1.0)
        if abs(p.m + 1.0) <= _EXACT:
            # int dt/(t ln t): double-log growth, slower than any log power
            return PowerLog(0.0, 0.1)
        return PowerLog(0.0, 0.0)
    return PowerLog(0.0, 0.0)


def l2_verdict(p, weight, band=0.0):
    """Convergence of  int_0 p(t)^2 * weight(t) dt  with optional band.

    With band > 0 (numerically fitted exponents) a verdict of MARGINAL is
    returned whenever the decisive exponent lies inside the band.
    """
    total = PowerLog(2.0 * p.beta + weight.beta, 2.0 * p.m + weight.m)
    if band > 0.0 and abs(total.beta + 1.0) < band:
        return Verdict.MARGINAL
    return total.integral_verdict()
