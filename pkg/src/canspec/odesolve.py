"""Adaptive propagation of canonical systems and scalar reductions.

The canonical system y' = z J H(x) y is propagated with an embedded
Dormand-Prince 5(4) pair on complex state.  Step control combines the
usual PI controller with two geometric bounds: near a singular endpoint
the step is a fraction of the distance to it (coefficients blow up like
powers of that distance), and in the oscillatory regime the step is
capped by the local rotation rate |z| sqrt(det H).  Determinant drift of
transfer matrices is renormalized multiplicatively and logged, never
silent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

J = np.array([[0.0, -1.0], [1.0, 0.0]])

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


class StepUnderflow(RuntimeError):
    """Step size collapsed; coefficient too rough at the requested tolerance."""


@dataclass
class FundamentalMatrix:
    x: float
    z: complex
    omega: np.ndarray  # 2x2 complex, rows are solutions of the system
    err: float = 0.0
    log_scale: float = 0.0  # true matrix = omega * exp(log_scale)
    det_drift_log: list = field(default_factory=list)

    @property
    def det(self):
        return complex(np.linalg.det(self.omega)) * math.exp(2.0 * self.log_scale)


@dataclass
class SolutionPath:
    z: complex
    xs: np.ndarray
    values: np.ndarray  # shape (n, 2) complex: (y1, y2) or (y, p y')
    err: float = 0.0

    def at(self, x):
        i = int(np.argmin(np.abs(self.xs - x)))
        if not math.isclose(self.xs[i], x, rel_tol=1e-12, abs_tol=1e-300):
            raise KeyError(f"x={x} not among stored points")
        return self.values[i]


def _integrate(f, x_from, x_to, y0, rtol, atol, max_step_at=None, first_step=None,
               max_steps=2_000_000):
    """Embedded DP54 with PI control on flat complex state.

    Returns (y, err_accum, n_steps).  max_step_at(x) bounds |h| at x.
    """
    y = np.asarray(y0, dtype=complex).copy()
    x = float(x_from)
    direction = 1.0 if x_to >= x_from else -1.0
    span = abs(x_to - x_from)
    if span == 0.0:
        return y, 0.0, 0
    # short legs between collection nodes are common; starting near the leg
    # length lets the controller shrink only when it must
    h = first_step if first_step is not None else span * 0.25
    if max_step_at is not None:
        h = min(h, max_step_at(x))
    h = max(h, span * 1e-15)
    err_accum = 0.0
    prev_err_norm = 1.0
    k = [None] * 7
    steps = 0
    while direction * (x_to - x) > 0:
        if max_step_at is not None:
            h = min(h, max_step_at(x))
        h = min(h, abs(x_to - x))
        if h <= abs(x) * 1e-16 + 1e-300:
            raise StepUnderflow(f"step underflow at x={x}")
        hs = direction * h
        k[0] = f(x, y)
        for i in range(1, 7):
            yi = y
            acc = np.zeros_like(y)
            for j, a in enumerate(_A[i]):
                if a:
                    acc = acc + a * k[j]
            k[i] = f(x + _C[i] * hs, y + hs * acc)
        y5 = y + hs * sum(b * ki for b, ki in zip(_B5, k) if b)
        y4 = y + hs * sum(b * ki for b, ki in zip(_B4, k) if b)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err_norm = float(np.sqrt(np.mean((np.abs(y5 - y4) / scale) ** 2)))
        if err_norm <= 1.0 or h <= abs(x) * 1e-13 + 1e-290:
            x += hs
            y = y5
            err_accum += err_norm * float(np.max(np.abs(y5 - y4)))
            steps += 1
            if steps > max_steps:
                raise StepUnderflow(f"step budget exhausted at x={x}")
            factor = 0.9 * err_norm ** -0.2 * prev_err_norm**0.04 if err_norm > 0 else 5.0
            prev_err_norm = max(err_norm, 1e-10)
            h *= min(5.0, max(0.2, factor))
        else:
            h *= max(0.2, 0.9 * err_norm**-0.25)
    return y, err_accum, steps


def _canonical_rhs(H, z):
    h11, h12, h22 = H.h11, H.h12, H.h22

    def f(x, y):
        a = float(h11(x))
        bq = float(h12(x))
        c = float(h22(x))
        # y' = z J H y, J = [[0,-1],[1,0]]
        if y.size == 2:
            return np.array(
                [-z * (bq * y[0] + c * y[1]), z * (a * y[0] + bq * y[1])], dtype=complex
            )
        m = y.reshape(2, 2)
        top = -z * (bq * m[0] + c * m[1])
        bot = z * (a * m[0] + bq * m[1])
        return np.concatenate([top, bot])

    return f


def _step_bound(H, z, a, b, osc_factor=8.0, endpoint_frac=0.25):
    absz = abs(z)
    h11, h12, h22 = H.h11, H.h12, H.h22

    def bound(x):
        lim = math.inf
        if math.isfinite(a) and x > a:
            lim = min(lim, endpoint_frac * (x - a))
        if math.isfinite(b) and x < b:
            lim = min(lim, endpoint_frac * (b - x))
        if absz > 0:
            det = float(h11(x)) * float(h22(x)) - float(h12(x)) ** 2
            rate = absz * math.sqrt(max(det, 0.0))
            if rate > 0:
                lim = min(lim, 1.0 / (osc_factor * rate))
        return lim if math.isfinite(lim) else 1e30

    return bound


def propagate(H, z, x_from, x_to, init, tol=1e-10, renormalize_det=True):
    """Propagate a fundamental matrix (2x2 init) or a solution vector.

    For matrix initial data the rows are solutions of y' = zJHy (transfer
    matrix convention); determinant drift beyond 10*tol is renormalized
    multiplicatively and recorded.
    """
    init = np.asarray(init, dtype=complex)
    f = _canonical_rhs(H, z)
    bound = _step_bound(H, z, H.a, H.b)
    if init.shape == (2,):
        y, err, _ = _integrate(f, x_from, x_to, init, tol, tol * 1e-3, bound)
        return SolutionPath(z, np.array([x_to]), y.reshape(1, 2), err)
    # the integrator propagates solution columns; omega's rows are solutions
    y, err, _ = _integrate(f, x_from, x_to, init.T.ravel(), tol, tol * 1e-3, bound)
    fm = FundamentalMatrix(x=x_to, z=z, omega=y.reshape(2, 2).T, err=err)
    if renormalize_det:
        det0 = complex(np.linalg.det(init))
        _renormalize(fm, det0, tol)
    return fm


def _renormalize(fm, det_target, tol):
    det = complex(np.linalg.det(fm.omega))
    drift = abs(det - det_target)
    if drift > 10.0 * tol * max(1.0, abs(det_target)):
        fm.det_drift_log.append((fm.x, drift))
        fm.omega = fm.omega / np.sqrt(det / det_target)


def propagate_collect(H, z, x_points, init, tol=1e-10, scaled=False):
    """Propagate through an ordered sequence of x values, storing the state
    at each; with scaled=True the state is renormalized to unit max norm
    and the accumulated log-scale returned alongside."""
    f = _canonical_rhs(H, z)
    bound = _step_bound(H, z, H.a, H.b)
    y = np.asarray(init, dtype=complex).ravel().copy()
    out = np.empty((len(x_points) - 1, y.size), dtype=complex)
    logs = np.zeros(len(x_points) - 1)
    log_scale = 0.0
    err = 0.0
    for i in range(len(x_points) - 1):
        y, e, _ = _integrate(f, x_points[i], x_points[i + 1], y, tol, tol * 1e-3, bound)
        err += e
        if scaled:
            m = float(np.max(np.abs(y)))
            if m > 1e50 or (m > 0 and m < 1e-50):
                y /= m
                log_scale += math.log(m)
        out[i] = y
        logs[i] = log_scale
    return out, logs, err


def solve_scalar(problem, lam, x_from, x_to, init, tol=1e-10, collect=None):
    """Solve the scalar equation at spectral parameter lam.

    SL form: state (y, p y'); Schroedinger form: state (u, u').  `problem`
    must expose the coefficient callables via attributes p/w or V.
    """
    if hasattr(problem, "V"):
        V = problem.V

        def f(x, y):
            return np.array([y[1], (float(V(x)) - lam) * y[0]], dtype=complex)

        rate = lambda x: math.sqrt(abs(lam - float(V(x)))) if lam != 0 else 0.0
    else:
        p, w = problem.p, problem.w

        def f(x, y):
            return np.array([y[1] / float(p(x)), -lam * float(w(x)) * y[0]], dtype=complex)

        rate = lambda x: math.sqrt(abs(lam) * float(w(x)) / float(p(x)))
    a = getattr(problem, "a", 0.0)
    b = getattr(problem, "b", math.inf)

    def bound(x):
        lim = 1e30
        if math.isfinite(a) and x > a:
            lim = min(lim, 0.25 * (x - a))
        if math.isfinite(b) and x < b:
            lim = min(lim, 0.25 * (b - x))
        r = rate(x)
        if r > 0:
            lim = min(lim, 1.0 / (8.0 * r))
        return lim

    y0 = np.asarray(init, dtype=complex)
    if collect is None:
        y, err, _ = _integrate(f, x_from, x_to, y0, tol, tol * 1e-3, bound)
        return SolutionPath(lam, np.array([x_to]), y.reshape(1, 2), err)
    xs = np.asarray(collect, dtype=float)
    pts = np.concatenate([[x_from], xs])
    vals = np.empty((len(xs), 2), dtype=complex)
    y = y0.copy()
    err = 0.0
    for i in range(len(xs)):
        y, e, _ = _integrate(f, pts[i], pts[i + 1], y, tol, tol * 1e-3, bound)
        vals[i] = y
        err += e
    return SolutionPath(lam, xs, vals, err)


# ---------------------------------------------------------------------------
# vectorized fixed-step propagation over a family of real spectral points
# ---------------------------------------------------------------------------


def propagate_batch(H, zs, x_from, checkpoints, init, pts_per_wave=16.0,
                    endpoint_frac=0.02):
    """Classic RK4 with a common step plan, vectorized over z.

    zs: real array; init: array (2, nz) initial vectors at x_from;
    checkpoints: increasing x values at which states are recorded.
    Step plan: geometric near the left endpoint, then bounded by the
    fastest oscillation max|z| sqrt(det H).
    """
    zs = np.asarray(zs, dtype=float)
    y = np.array(init, dtype=complex)
    h11, h12, h22 = H.h11, H.h12, H.h22
    zmax = float(np.max(np.abs(zs))) if zs.size else 0.0
    a = H.a

    def rhs(x, y):
        c11 = float(h11(x))
        c12 = float(h12(x))
        c22 = float(h22(x))
        return np.stack([
            -zs * (c12 * y[0] + c22 * y[1]),
            zs * (c11 * y[0] + c12 * y[1]),
        ])

    def local_h(x):
        lim = 1e30
        if math.isfinite(a) and x > a:
            lim = min(lim, endpoint_frac * (x - a))
        det = float(h11(x)) * float(h22(x)) - float(h12(x)) ** 2
        rate = zmax * math.sqrt(max(det, 0.0))
        if rate > 0:
            lim = min(lim, 2.0 * math.pi / (pts_per_wave * rate))
        return lim

    out = np.empty((len(checkpoints),) + y.shape, dtype=complex)
    x = float(x_from)
    for ci, cx in enumerate(checkpoints):
        while x < cx:
            h = min(local_h(x), cx - x)
            k1 = rhs(x, y)
            k2 = rhs(x + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(x + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(x + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            x += h
        out[ci] = y
    return out
