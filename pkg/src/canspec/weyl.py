"""Singular Weyl coefficients: evaluation with error control, equivalence
class normalization, and the shift / Weyl-pole transformations.

Two evaluation routes are provided.  The disk route evaluates the Moebius
quotients of the fundamental pair at growing truncation points for
tau in {0, 1, inf}; the nested Weyl disks shrink to the value and the
doubled max pairwise spread is a conservative diameter bound.  It
converges exponentially off the real axis but stalls near the essential
spectrum, where the far-field (WKB) closure route replaces the real
boundary parameter by the outgoing solution's logarithmic derivative;
that route applies to diagonal problems on half-infinite intervals and
extends evaluation to the boundary of the spectrum.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .boundary import CanonicalModel
from .expressions import coefficient_from_callable
from .hamiltonian import HamiltonianSpec, diagonal_hamiltonian


class NoConvergence(RuntimeError):
    """Truncation exhausted the representable range before the Weyl disks
    shrank below tolerance; possible limit-circle behaviour at b."""


@dataclass
class WeylFunction:
    """Evaluator z -> (value, error bound) with class metadata."""

    evaluator: Callable
    kind: str  # "q_H" | "m_pw" | "m_plus" | "m_schr"
    Delta: int
    x0: float
    neg_index: int
    normalizing_polynomial: tuple = ()
    shift_polynomial: tuple = ()  # from nonzero chain constants, recorded only
    provenance: str = ""

    def __call__(self, z, tol=1e-8):
        return self.evaluator(z, tol)

    def value(self, z, tol=1e-8):
        return self.evaluator(z, tol)[0]


def sqrt_upper(lam):
    """Branch with Im sqrt(lam) > 0 on C minus [0, inf)."""
    r = cmath.sqrt(lam)
    if r.imag < 0 or (r.imag == 0 and r.real < 0):
        r = -r
    return r


# ---------------------------------------------------------------------------
# evaluation routes
# ---------------------------------------------------------------------------


def disk_value(model, z, tol=1e-8, max_doublings=64):
    """tau-bracket evaluation of q_H(z); returns (value, error)."""
    pair = model.pair(z, tol=max(1e-13, 0.01 * tol))
    span0 = max(model.x0 - model.a, 1.0)
    x = model.x0 + span0
    best = None
    for _ in range(max_doublings):
        Y, _ = pair.eval(x)
        vals = _tau_quotients(Y)
        spread = max(
            abs(vals[0] - vals[1]), abs(vals[0] - vals[2]), abs(vals[1] - vals[2])
        )
        centroid = (vals[0] + vals[1] + vals[2]) / 3.0
        err = 2.0 * spread
        if best is None or err < best[1]:
            best = (centroid, err)
        if err < tol:
            return centroid, err
        if math.isinf(model.b):
            x = model.x0 + 2.0 * (x - model.x0)
            if x > 1e13:
                break
        else:
            x = model.b - 0.5 * (model.b - x)
            if model.b - x < 1e-13 * (model.b - model.a):
                break
    raise NoConvergence(
        f"Weyl disks did not close below tol={tol:.1e} (best {best[1]:.2e}); "
        "possible limit circle at b or spectral-parameter too close to the spectrum"
    )


def _tau_quotients(Y):
    # Y columns are theta, phi; quotients (theta1 tau + theta2)/(phi1 tau + phi2)
    th1, ph1 = Y[0, 0], Y[0, 1]
    th2, ph2 = Y[1, 0], Y[1, 1]
    return (th1 / ph1, th2 / ph2, (th1 + th2) / (ph1 + ph2))


def wkb_closure_value(model, z, tol=1e-8, max_doublings=24):
    """Far-field closure evaluation of q_H(z) for diagonal problems on
    (a, inf): the real boundary parameter at the truncation point is
    replaced by the outgoing WKB logarithmic derivative, which keeps the
    truncation error algebraically small even on the spectrum."""
    if not math.isinf(model.b):
        raise NoConvergence("closure route requires b = inf")
    z = complex(z)
    lam = z * z
    pair = model.pair(z, tol=max(1e-13, 0.01 * tol))
    X = _wkb_start(model, lam)
    prev = None
    for _ in range(max_doublings):
        q = _closure_quotient(model, pair, z, lam, X)
        if prev is not None:
            err = 2.0 * abs(q - prev[0])
            if err < tol:
                return q, err
            prev = (q, err)
        else:
            prev = (q, math.inf)
        X *= 2.0
        if X > 1e9:
            break
    return prev[0], prev[1]


def _wkb_start(model, lam, validity=0.05):
    X = max(2.0 * (model.x0 - model.a), 1.0) + model.a
    for _ in range(40):
        k, kp, _ = _wkb_k(model, lam, X)
        if abs(k) > 0 and abs(kp) / abs(k) ** 2 < validity:
            return X
        X *= 2.0
    return X


def _phase_fn(model, lam, x):
    # Q = (sqrt p)''/sqrt p - lam w / p with p = 1/h11, w = h22
    h = 1e-3 * x
    xs = x + h * np.arange(-2.0, 3.0)
    p = 1.0 / np.asarray(model.chart.h11(xs), dtype=float)
    w = np.asarray(model.chart.h22(xs), dtype=float)
    sp = np.sqrt(p)
    d2 = (-sp[4] + 16 * sp[3] - 30 * sp[2] + 16 * sp[1] - sp[0]) / (12 * h * h)
    gamma = d2 / sp[2]
    return lam * w[2] / p[2] - gamma


def _wkb_k(model, lam, x):
    h = 1e-2 * x
    ks = []
    for xx in (x - h, x, x + h):
        val = _phase_fn(model, lam, xx)
        k = cmath.sqrt(val)
        if k.imag < 0:
            k = -k
        ks.append(k)
    kp = (ks[2] - ks[0]) / (2 * h)
    kpp = (ks[2] - 2 * ks[1] + ks[0]) / (h * h)
    return ks[1], kp, kpp


def _closure_quotient(model, pair, z, lam, X):
    k, kp, kpp = _wkb_k(model, lam, X)
    s_v = 1j * k - kp / (2 * k) - 1j * (kpp / (4 * k * k) - 3 * kp * kp / (8 * k**3))
    h = 1e-3 * X
    p_m = 1.0 / float(model.chart.h11(X - h))
    p_0 = 1.0 / float(model.chart.h11(X))
    p_p = 1.0 / float(model.chart.h11(X + h))
    p_prime = (p_p - p_m) / (2 * h)
    sigma = p_0 * s_v - 0.5 * p_prime
    Y, _ = pair.eval(X)
    th1, ph1 = Y[0, 0], Y[0, 1]
    th2, ph2 = Y[1, 0], Y[1, 1]
    return (z * th1 - sigma * th2) / (z * ph1 - sigma * ph2)


def weyl_value(problem_or_model, z, tol=1e-8, method="auto"):
    """Singular Weyl coefficient q_H at z (Im z != 0 for the disk route).

    Returns (value, error bound).  method: "auto" | "disk" | "closure".
    """
    model = as_model(problem_or_model)
    z = complex(z)
    if method == "disk":
        return disk_value(model, z, tol)
    if method == "closure":
        return wkb_closure_value(model, z, tol)
    # auto: the disk route is certified; use it when it converges fast
    # (spectral parameter well off the real axis), otherwise the closure
    if math.isinf(model.b) and abs(z.imag) < 0.05 * max(1.0, abs(z.real)):
        return wkb_closure_value(model, z, tol)
    try:
        return disk_value(model, z, tol, max_doublings=40)
    except NoConvergence:
        if math.isinf(model.b):
            return wkb_closure_value(model, z, tol)
        raise


_MODELS = {}


def as_model(problem_or_model, x0=None, tol=1e-10):
    if isinstance(problem_or_model, CanonicalModel):
        return problem_or_model
    key = (id(problem_or_model), x0)
    hit = _MODELS.get(key)
    if hit is None or hit.problem is not problem_or_model:
        _MODELS[key] = CanonicalModel(problem_or_model, x0=x0, tol=tol)
    return _MODELS[key]


def make_weyl(problem_or_model, x0=None, kind="q_H", tol=1e-10, provenance=""):
    model = as_model(problem_or_model, x0=x0, tol=tol)
    D = model.Delta
    if kind == "q_H":
        neg = D
        def ev(z, tol_=1e-8):
            return weyl_value(model, z, tol_)
    elif kind in ("m_pw", "m_schr"):
        neg = D // 2
        def ev(lam, tol_=1e-8):
            zz = sqrt_upper(lam)
            val, err = weyl_value(model, zz, tol_ * abs(zz))
            return val / zz, err / abs(zz)
    elif kind == "m_plus":
        neg = (D + 1) // 2
        def ev(lam, tol_=1e-8):
            zz = sqrt_upper(lam)
            val, err = weyl_value(model, zz, tol_ / max(abs(zz), 1e-30))
            return zz * val, abs(zz) * err
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return WeylFunction(
        evaluator=ev, kind=kind, Delta=D, x0=model.x0, neg_index=neg,
        shift_polynomial=model.map.shift_polynomial, provenance=provenance,
    )


# ---------------------------------------------------------------------------
# equivalence-class normalization
# ---------------------------------------------------------------------------


class NotInSameClass(ValueError):
    pass


def fit_real_polynomial(zs, diffs, degree, zero_constant):
    """Least-squares real-coefficient polynomial through complex samples."""
    zs = np.asarray(zs, dtype=complex)
    diffs = np.asarray(diffs, dtype=complex)
    powers = range(1 if zero_constant else 0, degree + 1)
    cols = [zs**k for k in powers]
    A = np.vstack([np.concatenate([c.real, c.imag]) for c in cols]).T
    b = np.concatenate([diffs.real, diffs.imag])
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    fitted = sum(c * zs**k for c, k in zip(coef, powers)) if len(cols) else 0 * zs
    resid = float(np.max(np.abs(diffs - fitted))) if len(zs) else 0.0
    full = np.zeros(degree + 1)
    for c, k in zip(coef, powers):
        full[k] = c
    return tuple(full), resid


def normalize_class(q, reference, grid, tol=1e-8, resid_threshold=1e-4):
    """Fit the real polynomial reducing q to the class representative of
    `reference`; pure metadata operation, returns a new WeylFunction."""
    if q.Delta != reference.Delta:
        raise NotInSameClass("growth indices differ")
    zero_constant = q.kind == "q_H"
    degree = 2 * q.Delta if q.kind == "q_H" else max(q.Delta - 1, 0)
    diffs = []
    for zz in grid:
        v1, _ = q(zz, tol)
        v2, _ = reference(zz, tol)
        diffs.append(v1 - v2)
    coeffs, resid = fit_real_polynomial(grid, diffs, degree, zero_constant)
    if resid > resid_threshold * max(1.0, float(np.max(np.abs(diffs)))):
        raise NotInSameClass(f"residual {resid:.2e} above threshold")

    def ev(z, tol_=1e-8):
        val, err = q(z, tol_)
        return val - _polyval_real(coeffs, z), err

    return WeylFunction(
        evaluator=ev, kind=q.kind, Delta=q.Delta, x0=q.x0, neg_index=q.neg_index,
        normalizing_polynomial=coeffs, shift_polynomial=q.shift_polynomial,
        provenance=q.provenance,
    )


def _polyval_real(coeffs, z):
    out = 0.0 + 0.0j
    for k, c in enumerate(coeffs):
        out += c * z**k
    return out


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------


def shift_transform(H, alpha):
    """H_alpha = (1 alpha; 0 1) H (1 0; alpha 1); the singular Weyl
    coefficient changes by a real polynomial with constant term alpha."""
    alpha = float(alpha)
    h11, h12, h22 = H.h11, H.h12, H.h22

    def n11(x):
        return (
            np.asarray(h11(x)) + 2.0 * alpha * np.asarray(h12(x))
            + alpha**2 * np.asarray(h22(x))
        )

    def n12(x):
        return np.asarray(h12(x)) + alpha * np.asarray(h22(x))

    return HamiltonianSpec(
        H.a,
        H.b,
        coefficient_from_callable(n11, hint=H.h11.hint),
        coefficient_from_callable(n12),
        coefficient_from_callable(lambda x: np.asarray(h22(x)), hint=H.h22.hint),
    )


def shifted_weyl_value(model, alpha, z, tol=1e-8):
    """A singular Weyl coefficient of shift_transform(H, alpha), evaluated
    by transporting the pair normalization at the base point and running
    the transformed Hamiltonian's own canonical system outward."""
    H_alpha = shift_transform(model.H, alpha)
    pair = model.pair(z)
    Y0, ls0 = pair.eval(model.x0)
    Tt_inv = np.array([[1.0, 0.0], [-alpha, 1.0]])  # (T^T)^{-1}
    Tt = np.array([[1.0, 0.0], [alpha, 1.0]])
    Y0a = Tt_inv @ Y0 @ Tt
    from .odesolve import _canonical_rhs, _integrate, _step_bound

    f = _canonical_rhs(H_alpha, z)
    bound = _step_bound(H_alpha, z, H_alpha.a, H_alpha.b)
    span0 = max(model.x0 - model.a, 1.0)
    x = model.x0 + span0
    Y = Y0a.copy()
    ls = ls0
    x_here = model.x0
    for _ in range(64):
        y, _, _ = _integrate(f, x_here, x, Y.ravel(), tol * 1e-2, tol * 1e-5, bound)
        Y = y.reshape(2, 2)
        m = float(np.max(np.abs(Y)))
        if m > 1e50:
            Y /= m
            ls += math.log(m)
        x_here = x
        vals = _tau_quotients(Y)
        spread = max(
            abs(vals[0] - vals[1]), abs(vals[0] - vals[2]), abs(vals[1] - vals[2])
        )
        if 2.0 * spread < tol:
            return (vals[0] + vals[1] + vals[2]) / 3.0, 2.0 * spread
        x = model.x0 + 2.0 * (x - model.x0)
        if x > 1e13:
            break
    raise NoConvergence("transformed Weyl disks did not close")


def c_transform(H, c, x0=None):
    """Diagonal transformation moving a Weyl pole weight at 0:
    alpha(x) = 1 + c * int_a^x h22; returns (H~, ok, predicted_shift).

    ok iff alpha > 0 throughout, equivalently c + mu({0}) >= 0; the Weyl
    coefficient of H~ differs from q_H - c/z by a real polynomial.
    """
    if not H.is_diagonal():
        raise ValueError("c-transform requires diagonal H")
    c = float(c)
    model = as_model(H, x0=x0)
    mesh = model.mesh
    h22_nodal = mesh.sample(H.h22)
    W_nodal, lower, _ = mesh.integrate_from_endpoint(h22_nodal)
    W_x0 = float(lower[0])

    from .mesh import RightMesh

    rmesh = RightMesh(model.x0, H.b)
    tail_vals = rmesh.sample(H.h22)
    gamma = rmesh.endpoint_exponent(tail_vals)
    if math.isinf(H.b):
        tail_finite = gamma < -1.0 - 0.05
    else:
        tail_finite = gamma > -1.0 + 0.05
    total = W_x0 + float(np.sum(rmesh.panel_integrals(tail_vals))) if tail_finite else math.inf
    ok = c >= 0.0 or (math.isfinite(total) and c * total >= -1.0 + 1e-12)

    def alpha_fn(x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x_arr)
        lo = x_arr <= model.x0
        if np.any(lo):
            out[lo] = mesh.eval_nodal(W_nodal, x_arr[lo])
        if np.any(~lo):
            from scipy.integrate import quad

            out[~lo] = [
                W_x0 + quad(lambda s: float(H.h22(s)), model.x0, xx, limit=200)[0]
                for xx in x_arr[~lo]
            ]
        res = 1.0 + c * out
        return res if np.ndim(x) else float(res[0])

    def n11(x):
        return np.asarray(alpha_fn(x)) ** 2 * np.asarray(H.h11(x))

    def n22(x):
        return np.asarray(H.h22(x)) / np.asarray(alpha_fn(x)) ** 2

    Ht = diagonal_hamiltonian(
        H.a, H.b,
        coefficient_from_callable(n11, hint=H.h11.hint),
        coefficient_from_callable(n22, hint=H.h22.hint),
    )
    return Ht, ok, c
