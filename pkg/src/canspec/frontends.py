"""Scalar problem families and their reduction to the canonical core.

Three families are covered: Sturm-Liouville pairs -(py')' = lam w y with
1/p singular at a (diagonal H = diag(1/p, w), psi -> (p psi', z psi)),
the swapped variant with w singular (H = diag(w, 1/p)), and half-line
Schroedinger operators -u'' + V u = lam u reduced through a positive
zero-energy solution phi via p = w = phi^2, u -> u/phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .expressions import CoefficientFn, coefficient_from_callable
from .hamiltonian import SLChart, compute_Delta, diagonal_hamiltonian
from .mesh import LeftMesh, RightMesh
from .odesolve import solve_scalar
from .weyl import (
    WeylFunction,
    as_model,
    fit_real_polynomial,
    make_weyl,
    sqrt_upper,
    weyl_value,
)


def _inverse_coefficient(c):
    hint = None
    if c.hint is not None:
        hint = (-c.hint[0], -c.hint[1])
    return coefficient_from_callable(lambda x: 1.0 / np.asarray(c(x)), hint=hint)


@dataclass(frozen=True, eq=False)
class SLProblem:
    p: CoefficientFn
    w: CoefficientFn
    a: float
    b: float
    variant: str = "singular_1_over_p"
    x0: Optional[float] = None

    def __post_init__(self):
        if self.variant not in ("singular_1_over_p", "singular_w"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def sl_chart(self):
        if self.variant == "singular_1_over_p":
            return SLChart(self.a, self.b, _inverse_coefficient(self.p), self.w)
        return SLChart(self.a, self.b, self.w, _inverse_coefficient(self.p))

    def validate(self, n=128):
        xs = _interior_points(self.a, self.b, n)
        pv = np.asarray(self.p(xs), dtype=float)
        wv = np.asarray(self.w(xs), dtype=float)
        if np.any(pv <= 0) or np.any(wv <= 0):
            raise ValueError("p and w must be positive a.e.")
        chart = self.sl_chart()
        mesh = LeftMesh(self.a, _chart_x0(self))
        beta_sing = mesh.local_exponent(mesh.sample(chart.h11))
        beta_int = mesh.local_exponent(mesh.sample(chart.h22))
        if beta_sing > -1.0:
            raise ValueError("the designated singular coefficient is integrable at a")
        if beta_int < -1.0:
            raise ValueError("the designated integrable coefficient diverges at a")
        return True


@dataclass(frozen=True, eq=False)
class SchrodingerProblem:
    V: CoefficientFn
    b: float
    phi: CoefficientFn
    x0: Optional[float] = None
    l: Optional[float] = None
    a: float = 0.0

    def sl_chart(self):
        hint = None
        if self.phi.hint is not None:
            hint = (2 * self.phi.hint[0], 2 * self.phi.hint[1])
        elif self.l is not None:
            hint = (2.0 * (self.l + 1.0), 0.0)
        sq = coefficient_from_callable(
            lambda x: np.asarray(self.phi(x)) ** 2, hint=hint
        )
        inv = coefficient_from_callable(
            lambda x: np.asarray(self.phi(x)) ** -2,
            hint=(-hint[0], -hint[1]) if hint else None,
        )
        return SLChart(self.a, self.b, inv, sq, kind="schrodinger", phi=self.phi)

    def to_sl(self):
        chart = self.sl_chart()
        p = coefficient_from_callable(
            lambda x: np.asarray(self.phi(x)) ** 2,
            hint=None if chart.h22.hint is None else chart.h22.hint,
        )
        return SLProblem(p, p, self.a, self.b, x0=self.x0)

    def validate(self, n=96, rtol=1e-5):
        xs = _interior_points(self.a, self.b, n)
        ph = np.asarray(self.phi(xs), dtype=float)
        if np.any(ph <= 0):
            raise ValueError("phi must be positive on (0, b)")
        # residual of -phi'' + V phi = 0, scaled by the local terms
        h = np.minimum(1e-4 * np.maximum(xs, 1e-6), 0.45 * (xs - self.a))
        d2 = (np.asarray(self.phi(xs + h)) - 2 * ph + np.asarray(self.phi(xs - h))) / h**2
        res = np.abs(d2 - np.asarray(self.V(xs)) * ph)
        scale = np.abs(d2) + np.abs(np.asarray(self.V(xs)) * ph) + 1.0
        if np.max(res / scale) > max(rtol, 1e3 * np.max(h) ** 2):
            raise ValueError("phi does not solve the zero-energy equation")
        mesh = LeftMesh(self.a, _chart_x0(self))
        beta = mesh.local_exponent(mesh.sample(lambda x: np.asarray(self.phi(x)) ** 2))
        if beta < -1.0:
            raise ValueError("phi is not square integrable at 0")
        if -beta < -1.0 + 1e-12:
            raise ValueError("1/phi is square integrable at 0; wrong solution chosen")
        return True


def _interior_points(a, b, n):
    if math.isinf(b):
        return a + np.geomspace(1e-6, 1e3, n)
    return a + (b - a) * np.linspace(1e-4, 1.0 - 1e-4, n)


def _chart_x0(problem):
    if problem.x0 is not None:
        return problem.x0
    if math.isfinite(problem.b):
        return problem.a + 0.5 * (problem.b - problem.a)
    return problem.a + 1.0


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------


def sl_to_hamiltonian(slp):
    """Diagonal Hamiltonian of the pair; canonical orientation has the
    non-integrable entry first."""
    chart = slp.sl_chart()
    return diagonal_hamiltonian(chart.a, chart.b, chart.h11, chart.h22)


def schrodinger_to_sl(sp):
    return sp.to_sl()


def phi_from_potential(V, l, b, x_seed=None, x_max=None, n_store=400):
    """Positive zero-energy solution with phi ~ x^(l+1) at 0, computed by
    integrating -phi'' + V phi = 0 outward from an asymptotic seed."""
    x_seed = x_seed if x_seed is not None else 1e-7
    hi = x_max if x_max is not None else (b if math.isfinite(b) else 1e4)

    class _P:
        pass

    prob = _P()
    prob.V = V
    prob.a = 0.0
    prob.b = b
    xs = np.geomspace(x_seed * 2.0, hi * 0.999 if math.isfinite(b) else hi, n_store)
    init = (x_seed ** (l + 1.0), (l + 1.0) * x_seed**l)
    sol = solve_scalar(prob, 0.0, x_seed, None, init, tol=1e-12, collect=xs)
    vals = sol.values[:, 0].real
    ders = sol.values[:, 1].real
    if np.any(vals <= 0):
        raise ValueError("computed zero-energy solution is not positive; "
                         "shift the spectral parameter or supply phi explicitly")
    log_interp_x = np.log(xs)

    def phi(x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x_arr)
        small = x_arr <= xs[0]
        out[small] = x_arr[small] ** (l + 1.0)
        mid = ~small
        if np.any(mid):
            out[mid] = np.exp(
                np.interp(np.log(x_arr[mid]), log_interp_x, np.log(vals))
            )
        return out if np.ndim(x) else float(out[0])

    return coefficient_from_callable(phi, hint=(l + 1.0, 0.0))


# ---------------------------------------------------------------------------
# Titchmarsh-Weyl coefficients
# ---------------------------------------------------------------------------


def m_kind(problem):
    if isinstance(problem, SchrodingerProblem):
        return "m_schr"
    if isinstance(problem, SLProblem) and problem.variant == "singular_w":
        return "m_plus"
    return "m_pw"


def m_coefficient(problem, lam, tol=1e-8, verify_direct=False):
    """Singular Titchmarsh-Weyl coefficient at lam (not in [0, inf)),
    computed through the canonical core; with verify_direct=True the
    scalar-solution ratio continued by the scalar integrator is returned
    alongside as (value, error, direct_value)."""
    kind = m_kind(problem)
    model = as_model(problem, x0=problem.x0)
    mfun = make_weyl(model, kind=kind)
    val, err = mfun(lam, tol)
    if not verify_direct:
        return val, err
    direct = _direct_scalar_ratio(problem, model, lam, tol)
    return val, err, direct


def _direct_scalar_ratio(problem, model, lam, tol):
    """Continue the scalar pair from moderate x with the scalar integrator
    and form theta/phi at a far truncation point."""
    z = sqrt_upper(lam)
    pair = model.pair(z)
    x1 = model.x0 + max(1.0, model.x0 - model.a)
    Y, ls = pair.eval(x1)
    scale = math.exp(ls)
    if isinstance(problem, SLProblem) and problem.variant == "singular_w":
        # psi-canonical = (-z psi, p psi'): scalar (y, py') = (-Y0/z, Y1)
        th = (-Y[0, 0] / z * scale, Y[1, 0] * scale)
        ph = (-Y[0, 1] / z * scale, Y[1, 1] * scale)
        slp = problem
    else:
        # psi-canonical = (p psi', z psi): scalar (y, py') = (Y1/z, Y0)
        th = (Y[1, 0] / z * scale, Y[0, 0] * scale)
        ph = (Y[1, 1] / z * scale, Y[0, 1] * scale)
        slp = problem.to_sl() if isinstance(problem, SchrodingerProblem) else problem
    X = x1
    ratio_prev = None
    for _ in range(40):
        X = model.x0 + 2.0 * (X - model.x0)
        if X > 1e12:
            break
        s_th = solve_scalar(slp, lam, x1, X, th, tol=tol * 1e-2)
        s_ph = solve_scalar(slp, lam, x1, X, ph, tol=tol * 1e-2)
        ratio = s_th.values[-1][0] / s_ph.values[-1][0]
        if isinstance(problem, SLProblem) and problem.variant == "singular_w":
            # the scalar ratio recovers q; the + coefficient carries a factor z
            ratio = ratio * z
        if ratio_prev is not None and abs(ratio - ratio_prev) < tol:
            return ratio
        ratio_prev = ratio
    return ratio_prev


# ---------------------------------------------------------------------------
# travel time and uniqueness diagnostics
# ---------------------------------------------------------------------------


def travel_time(problem, tau):
    """The point where int_a^x sqrt(det H) reaches tau (b if never)."""
    chart = (
        problem.sl_chart()
        if hasattr(problem, "sl_chart")
        else SLChart(problem.a, problem.b, problem.h11, problem.h22)
    )
    if hasattr(problem, "h12") and not problem.is_diagonal():
        def dens(x):
            h11 = np.asarray(problem.h11(x), dtype=float)
            h22 = np.asarray(problem.h22(x), dtype=float)
            h12 = np.asarray(problem.h12(x), dtype=float)
            return np.sqrt(np.maximum(h11 * h22 - h12**2, 0.0))
    else:
        def dens(x):
            return np.sqrt(
                np.asarray(chart.h11(x), dtype=float)
                * np.asarray(chart.h22(x), dtype=float)
            )
    a, b = chart.a, chart.b
    x0 = _chart_x0(problem) if hasattr(problem, "x0") else a + 1.0
    mesh = LeftMesh(a, x0)
    nodal = mesh.sample(dens)
    _, lower, _ = mesh.integrate_from_endpoint(nodal)
    left_total = float(lower[0])

    def arc(x):
        if x <= x0:
            _, low2, _ = mesh.integrate_from_endpoint(nodal)
            vals, _ = mesh.integrate_to_base(nodal)
            return left_total - float(mesh.eval_nodal(vals, x))
        return left_total + quad(lambda s: float(dens(s)), x0, x, limit=400)[0]

    if arc(x0) >= tau:
        lo = a + (x0 - a) * 1e-12
        return brentq(lambda x: arc(x) - tau, lo, x0, xtol=1e-14)
    hi = x0 + max(1.0, x0 - a)
    cap = b if math.isfinite(b) else 1e12
    while arc(min(hi, cap * 0.9999999)) < tau:
        if hi >= cap:
            return b
        hi = min(2 * hi, cap)
    return brentq(lambda x: arc(x) - tau, x0, min(hi, cap), xtol=1e-12)


def c0_uniqueness_transform(slp, gamma, gamma_prime, c0, interval):
    """Transformed pair for the singular-w family: reparameterization plus
    the one-parameter family that shifts the Titchmarsh-Weyl coefficient
    by the constant c0; requires 1 + c0 * int dt/p >= 0 up to b."""
    if slp.variant != "singular_w":
        raise ValueError("transform applies to the singular-w family")
    a1, b1 = slp.a, slp.b
    x0 = _chart_x0(slp)
    mesh = LeftMesh(a1, x0)
    invp = mesh.sample(lambda x: 1.0 / np.asarray(slp.p(x), dtype=float))
    _, lower, _ = mesh.integrate_from_endpoint(invp)
    P_x0 = float(lower[0])

    def P(x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x_arr)
        lo = x_arr <= x0
        if np.any(lo):
            vals, _, _ = mesh.integrate_from_endpoint(invp)
            out[lo] = mesh.eval_nodal(vals, x_arr[lo])
        for i in np.nonzero(~lo)[0]:
            out[i] = P_x0 + quad(lambda s: 1.0 / float(slp.p(s)), x0, x_arr[i], limit=400)[0]
        return out if np.ndim(x) else float(out[0])

    total = P_x0 + (
        quad(lambda s: 1.0 / float(slp.p(s)), x0, b1, limit=400)[0]
        if math.isfinite(b1)
        else _improper_tail(lambda s: 1.0 / float(slp.p(s)), x0)
    )
    if 1.0 + c0 * total < -1e-12:
        raise ValueError("positivity 1 + c0 int dt/p >= 0 violated")

    def factor(x):
        return 1.0 + c0 * np.asarray(P(gamma(x)))

    def p2(x):
        return np.asarray(slp.p(gamma(x))) * np.asarray(factor(x)) ** 2 / np.asarray(
            gamma_prime(x)
        )

    def w2(x):
        return (
            np.asarray(slp.w(gamma(x)))
            * np.asarray(factor(x)) ** 2
            * np.asarray(gamma_prime(x))
        )

    a2, b2 = interval
    return SLProblem(
        coefficient_from_callable(p2, hint=slp.p.hint),
        coefficient_from_callable(w2, hint=slp.w.hint),
        a2, b2, variant="singular_w",
        x0=None,
    )


def _improper_tail(fn, x_from):
    total = 0.0
    x = x_from
    for _ in range(60):
        seg = quad(fn, x, 2 * x, limit=200)[0]
        total += seg
        x *= 2
        if seg < 1e-13 * max(total, 1.0):
            return total
    return math.inf


@dataclass
class LocalComparison:
    tau_hat: float
    tau_band: tuple
    slope: float
    polynomial: tuple
    scaling: float
    n_used: int
    noise_floor: float
    indistinguishable: bool

    @property
    def verdict(self):
        return "indistinguishable" if self.indistinguishable else "distinct"


def compare_local(m1, m2, beta, r_grid, kind="m", allow_scaling=False, tol=1e-10,
                  delta_max=None):
    """Fit the exponential closeness rate of two Weyl-type coefficients
    along the ray arg = beta.

    Removes the best-fit real polynomial (and an optimal positive scalar
    for the Schroedinger family), then regresses log|difference| against
    sqrt(r) sin(beta/2) (m-kinds) or r sin(beta) (q-kind); the fitted
    decay rate is slope/(-2).
    """
    r_grid = np.asarray(sorted(r_grid), dtype=float)
    zs = r_grid * np.exp(1j * beta)
    v1 = np.empty(len(zs), dtype=complex)
    v2 = np.empty(len(zs), dtype=complex)
    errs = np.zeros(len(zs))
    for i, zz in enumerate(zs):
        a1, e1 = m1(zz, tol)
        a2, e2 = m2(zz, tol)
        v1[i], v2[i], errs[i] = a1, a2, e1 + e2
    dmax = delta_max if delta_max is not None else max(m1.Delta, m2.Delta)
    if kind == "q":
        degree, zero_const, coord = 2 * dmax, True, r_grid * math.sin(beta)
    else:
        degree, zero_const, coord = max(dmax - 1, 0), False, np.sqrt(r_grid) * math.sin(
            beta / 2.0
        )
    # joint fit of (scaling, polynomial) on the top of the ray, where the
    # exponentially small part is negligible
    top = slice(len(zs) // 2, None)
    c = 1.0
    if allow_scaling:
        c = _fit_scaling(zs[top], v1[top], v2[top], degree, zero_const)
    coeffs, _ = fit_real_polynomial(zs[top], v1[top] - c * v2[top], degree, zero_const)
    d = v1 - c * v2 - np.array([_polyval(coeffs, zz) for zz in zs])
    noise = max(float(np.max(errs)), 1e-13 * float(np.max(np.abs(v1))))
    usable = np.abs(d) > 10.0 * noise
    # exclude the polynomial-fit window from the decay fit
    usable[top] = False
    n_used = int(usable.sum())
    if n_used < 4:
        return LocalComparison(math.inf, (math.inf, math.inf), 0.0, coeffs, c, n_used,
                               noise, True)
    x = coord[usable]
    y = np.log(np.abs(d[usable]))
    A = np.vstack([x, np.ones_like(x)]).T
    sol, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(sol[0])
    dof = max(n_used - 2, 1)
    sigma = math.sqrt(float(res[0]) / dof) if len(res) else 0.0
    sx = float(np.std(x)) * math.sqrt(n_used) or 1.0
    band = 2.0 * sigma / sx
    tau_hat = -slope / 2.0
    return LocalComparison(
        tau_hat, (tau_hat - band / 2.0, tau_hat + band / 2.0), slope,
        coeffs, c, n_used, noise, False,
    )


def _fit_scaling(zs, v1, v2, degree, zero_const):
    # linear least squares over (c, poly coefficients)
    powers = list(range(1 if zero_const else 0, degree + 1))
    cols = [v2] + [zs**k for k in powers]
    A = np.vstack([np.concatenate([c.real, c.imag]) for c in cols]).T
    b = np.concatenate([v1.real, v1.imag])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = float(sol[0])
    return c if c > 0 else 1.0


def _polyval(coeffs, z):
    out = 0.0 + 0.0j
    for k, cc in enumerate(coeffs):
        out += cc * z**k
    return out


def compare_global(m1, m2, grid, kind="m", allow_scaling=False, tol=1e-9,
                   resid_threshold=1e-6):
    """Global uniqueness diagnostic: are the coefficients equal up to the
    class equivalence (and a positive scaling for the Schroedinger kind)?"""
    zs = np.asarray(grid, dtype=complex)
    v1 = np.array([m1(zz, tol)[0] for zz in zs])
    v2 = np.array([m2(zz, tol)[0] for zz in zs])
    dmax = max(m1.Delta, m2.Delta)
    if kind == "q":
        degree, zero_const = 2 * dmax, True
    else:
        degree, zero_const = max(dmax - 1, 0), False
    c = _fit_scaling(zs, v1, v2, degree, zero_const) if allow_scaling else 1.0
    coeffs, resid = fit_real_polynomial(zs, v1 - c * v2, degree, zero_const)
    scale = max(1.0, float(np.max(np.abs(v1))))
    return {
        "equivalent": resid < resid_threshold * scale,
        "residual": resid,
        "polynomial": coeffs,
        "scaling": c,
    }
