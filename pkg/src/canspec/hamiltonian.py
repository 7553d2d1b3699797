"""Hamiltonians, endpoint classification and the growth index Delta.

A Hamiltonian is a nonnegative 2x2 matrix function H on (a, b).  The
classification decides, near the left endpoint, Weyl's limit point/limit
circle alternative, two integral growth conditions (here called I and HS),
and the least recursion depth Delta at which the associated function chain
becomes square summable against H.  Delta is certified for diagonal
problems (equivalently scalar p/w or Schroedinger charts) either through
exact power-log asymptotics, when hints are available, or through a
numeric exponent fit flagged as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .asymptotics import (
    EXPONENT_BAND,
    PowerLog,
    Verdict,
    integrate_from_endpoint,
    integrate_to_base,
    l2_verdict,
)
from .expressions import CoefficientFn, coefficient_from_callable, constant_coefficient
from .mesh import LeftMesh, RightMesh, TailDivergence

UNDETERMINED = "Undetermined"


class Undecidable(ValueError):
    """A finiteness decision fell inside the indeterminacy band."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointClass:
    kind: str  # "LimitCircle" | "LimitPoint"
    trace_integral: float  # finite value or inf

    @property
    def limit_point(self):
        return self.kind == "LimitPoint"


@dataclass(frozen=True)
class ClassificationReport:
    left: EndpointClass
    right: EndpointClass
    holds_I: bool
    holds_HS: bool
    Delta: object  # int | "Undetermined" | None (None when (Delta) fails)
    in_class: bool
    method: str  # "closed-form rule" | "numeric L2 test"

    @property
    def delta_or_none(self):
        return self.Delta if isinstance(self.Delta, int) else None


@dataclass(frozen=True)
class HamiltonianSpec:
    """2x2 nonnegative matrix coefficient on (a, b) with endpoint metadata."""

    a: float
    b: float
    h11: CoefficientFn
    h12: CoefficientFn
    h22: CoefficientFn
    indivisible_intervals: tuple = ()

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")

    # -- validation ----------------------------------------------------

    def validate(self, n_samples=256):
        """Sample nonnegativity of H and consistency of declared indivisible
        intervals.  Soundness caveat: sampled, not proven."""
        xs = self._sample_points(n_samples)
        h11, h12, h22 = (np.asarray(c(xs), dtype=float) for c in (self.h11, self.h12, self.h22))
        if np.any(h11 < -1e-12) or np.any(h22 < -1e-12):
            raise ValueError("diagonal entries of H must be nonnegative")
        det = h11 * h22 - h12**2
        scale = np.maximum(h11 * h22, 1e-300)
        if np.any(det < -1e-9 * scale):
            raise ValueError("H must be nonnegative: h11*h22 - h12^2 < 0 on samples")
        if np.all(h11 + h22 <= 0):
            raise ValueError("tr H vanishes identically on samples")
        total = 0.0
        for (u, v), phi in self.indivisible_intervals:
            self._check_indivisible(u, v, phi)
            total += v - u
        if self.indivisible_intervals and len(self.indivisible_intervals) <= 2:
            if math.isclose(total, self.b - self.a, rel_tol=1e-9):
                raise ValueError(
                    "interval is one or two indivisible intervals; "
                    "the associated model space would be trivial"
                )
        return True

    def _sample_points(self, n):
        a, b = self.a, self.b
        if math.isinf(b):
            # geometric toward both the singular left end and infinity
            left = a + np.geomspace(1e-8, 1.0, n // 2)
            right = a + np.geomspace(1.0, 1e8, n - n // 2)
            return np.concatenate([left, right])
        mid = 0.5 * (a + b)
        left = a + (mid - a) * np.geomspace(1e-10, 1.0, n // 2)
        right = b - (b - mid) * np.geomspace(1e-10, 1.0, n - n // 2)[::-1]
        return np.concatenate([left, right])

    def _check_indivisible(self, u, v, phi, n=32, rtol=1e-6):
        xs = np.linspace(u + (v - u) * 1e-3, v - (v - u) * 1e-3, n)
        h11, h12, h22 = (np.asarray(c(xs), dtype=float) for c in (self.h11, self.h12, self.h22))
        h = h11 + h22
        c2, s2, cs = math.cos(phi) ** 2, math.sin(phi) ** 2, math.cos(phi) * math.sin(phi)
        res = max(
            np.max(np.abs(h11 - h * c2)),
            np.max(np.abs(h22 - h * s2)),
            np.max(np.abs(h12 - h * cs)),
        )
        if res > rtol * max(1.0, float(np.max(h))):
            raise ValueError(f"declared indivisible interval ({u}, {v}) is not of type {phi}")

    # -- structure -------------------------------------------------------

    def is_diagonal(self, n=64, tol=1e-12):
        xs = self._sample_points(n)
        h12 = np.asarray(self.h12(xs), dtype=float)
        scale = np.asarray(self.h11(xs), dtype=float) + np.asarray(self.h22(xs), dtype=float)
        return bool(np.all(np.abs(h12) <= tol * np.maximum(scale, 1.0)))

    def trace(self, x):
        return np.asarray(self.h11(x), dtype=float) + np.asarray(self.h22(x), dtype=float)


def diagonal_hamiltonian(a, b, h11, h22):
    return HamiltonianSpec(a, b, h11, constant_coefficient(0.0), h22)


# ---------------------------------------------------------------------------
# finiteness decisions
# ---------------------------------------------------------------------------


def _left_integral_decision(fn, a, x0, hint=None):
    """Decide finiteness of int_a^{x0} fn, returning (finite, value)."""
    if hint is not None:
        verdict = PowerLog(*hint).integral_verdict()
        if verdict is Verdict.MARGINAL:
            raise Undecidable("integral sits on the convergence threshold")
        if verdict is Verdict.DIVERGES:
            return False, math.inf
        mesh = LeftMesh(a, x0)
        vals = mesh.sample(fn)
        _, cum, _ = mesh.integrate_from_endpoint(vals, strict=False)
        return True, float(cum[0])
    mesh = LeftMesh(a, x0)
    vals = mesh.sample(fn)
    beta = mesh.local_exponent(vals)
    if abs(beta + 1.0) < EXPONENT_BAND:
        raise Undecidable(f"fitted exponent {beta:.3f} within band of -1")
    if beta < -1.0:
        return False, math.inf
    _, cum, _ = mesh.integrate_from_endpoint(vals, strict=False)
    return True, float(cum[0])


def classify_endpoint(H, side, x0):
    """Limit point / limit circle decision via the trace integral."""
    if side == "left":
        hint = _trace_hint(H)
        finite, value = _left_integral_decision(H.trace, H.a, x0, hint)
        return EndpointClass("LimitCircle" if finite else "LimitPoint", value)
    if side != "right":
        raise ValueError("side must be 'left' or 'right'")
    mesh = RightMesh(x0, H.b)
    vals = mesh.sample(H.trace)
    gamma = mesh.endpoint_exponent(vals)
    if math.isinf(H.b):
        # int^inf x^gamma converges iff gamma < -1
        if abs(gamma + 1.0) < EXPONENT_BAND:
            raise Undecidable(f"fitted exponent {gamma:.3f} within band of -1")
        finite = gamma < -1.0
    else:
        if abs(gamma + 1.0) < EXPONENT_BAND:
            raise Undecidable(f"fitted exponent {gamma:.3f} within band of -1")
        finite = gamma > -1.0
    value = float(np.sum(mesh.panel_integrals(vals))) if finite else math.inf
    return EndpointClass("LimitCircle" if finite else "LimitPoint", value)


def _trace_hint(H):
    if H.h11.hint is None or H.h22.hint is None:
        return None
    b1, m1 = H.h11.hint
    b2, m2 = H.h22.hint
    # the smaller power dominates as t -> 0; on a tie, the larger log power
    if b1 < b2 or (b1 == b2 and m1 > m2):
        return (b1, m1)
    return (b2, m2)


def check_I(H, x0):
    """Growth condition near a: int_a^{x0} h22 finite."""
    finite, _ = _left_integral_decision(H.h22, H.a, x0, H.h22.hint)
    return finite


def check_HS(H, x0):
    """Iterated growth condition: int_a^{x0} (int_a^x h22) h11 dx finite."""
    if H.h22.hint is not None and H.h11.hint is not None:
        inner, verdict = integrate_from_endpoint(PowerLog(*H.h22.hint))
        if verdict is Verdict.MARGINAL:
            raise Undecidable("(I) integral on the threshold")
        if verdict is Verdict.DIVERGES:
            return False
        outer = (inner * PowerLog(*H.h11.hint)).integral_verdict()
        if outer is Verdict.MARGINAL:
            raise Undecidable("(HS) integral on the threshold")
        return outer is Verdict.CONVERGES
    mesh = LeftMesh(H.a, x0)
    h22 = mesh.sample(H.h22)
    try:
        inner, _, _ = mesh.integrate_from_endpoint(h22)
    except TailDivergence:
        return False
    integrand = inner * mesh.sample(H.h11)
    beta = mesh.local_exponent(integrand)
    if abs(beta + 1.0) < EXPONENT_BAND:
        raise Undecidable(f"fitted (HS) exponent {beta:.3f} within band of -1")
    return beta > -1.0


# ---------------------------------------------------------------------------
# the w_l chains
# ---------------------------------------------------------------------------


@dataclass
class WkTable:
    """Recursive function family near the left endpoint.

    kind "sl": w_0 = 1, odd w_l = int_x^{x0} (1/p) w_{l-1}, even
    w_l = int_a^x w w_{l-1}; the canonical vector family for diagonal H is
    (w_l, 0) for even l and (0, -w_l) for odd l; the Schroedinger family
    uses w~_k = w_k/phi (k even), phi*w_k (k odd).
    """

    x0: float
    kind: str  # "sl" | "canonical" | "schrodinger"
    mesh: LeftMesh
    nodal: list  # nodal arrays per level
    constants: dict = field(default_factory=dict)  # c_l for odd l
    phi: Optional[CoefficientFn] = None  # for the schrodinger kind

    @property
    def kmax(self):
        return len(self.nodal) - 1

    def w(self, k, x):
        """Scalar chain value w_k(x)."""
        if k == 0:
            base = np.ones_like(np.asarray(x, dtype=float))
            return float(base) if np.ndim(x) == 0 else base
        return self.mesh.eval_nodal(self.nodal[k], x)

    def w_tilde(self, k, x):
        """Schroedinger chain value."""
        phi = self.phi(x)
        return self.w(k, x) / phi if k % 2 == 0 else phi * self.w(k, x)

    def canonical(self, k, x):
        """Canonical 2-vector chain value for diagonal H."""
        wk = self.w(k, x)
        zero = np.zeros_like(np.asarray(wk, dtype=float))
        if k % 2 == 0:
            return np.stack([np.asarray(wk), zero])
        return np.stack([zero, -np.asarray(wk)])

    def residual(self, k, n_grid=64):
        """Max residual of the defining recursion on an interior grid.

        Odd k: w_k' + (1/p) w_{k-1} = 0; even k: w_k' - w w_{k-1} = 0,
        normalized by the local derivative scale.
        """
        a, x0 = self.mesh.a, self.x0
        xs = a + (x0 - a) * np.geomspace(1e-6, 0.9, n_grid)
        h = (xs - a) * 1e-6
        d = (self.w(k, xs + h) - self.w(k, xs - h)) / (2 * h)
        rec = self._odd_weight(xs) * self.w(k - 1, xs) if k % 2 else self._even_weight(
            xs
        ) * self.w(k - 1, xs)
        target = -rec if k % 2 else rec
        scale = np.maximum(np.abs(target), np.abs(d).max() * 1e-12 + 1e-300)
        return float(np.max(np.abs(d - target) / scale))

    def _odd_weight(self, x):  # 1/p in the sl chart
        return self._ow(x)

    def _even_weight(self, x):  # w in the sl chart
        return self._ew(x)


def build_wk_chain(odd_weight, even_weight, a, x0, kmax, constants=None, kind="sl",
                   phi=None, mesh=None):
    """Build the scalar chain w_0..w_kmax on a graded mesh.

    odd_weight is the non-integrable factor (1/p, i.e. h11), even_weight the
    integrable one (w, i.e. h22).  Optional constants {l: c_l} shift the odd
    entries.
    """
    constants = dict(constants or {})
    mesh = mesh or LeftMesh(a, x0)
    ow = mesh.sample(odd_weight)
    ew = mesh.sample(even_weight)
    nodal = [np.ones_like(mesh.t_nodes)]
    for k in range(1, kmax + 1):
        prev = nodal[-1]
        if k % 2 == 1:
            vals, _ = mesh.integrate_to_base(ow * prev)
            c = constants.get(k, 0.0)
            if c:
                vals = vals + c
        else:
            try:
                vals, _, _ = mesh.integrate_from_endpoint(ew * prev)
            except TailDivergence as exc:
                raise TailDivergence(
                    f"chain entry w_{k} requires a divergent integral: {exc}"
                ) from exc
        nodal.append(vals)
    table = WkTable(x0=x0, kind=kind, mesh=mesh, nodal=nodal, constants=constants, phi=phi)
    table._ow = lambda x: np.asarray(odd_weight(x), dtype=float)
    table._ew = lambda x: np.asarray(even_weight(x), dtype=float)
    return table


def build_wk(problem, x0, kmax, constants=None):
    """Chain table for a diagonal Hamiltonian, an SL pair or a Schroedinger
    pair; see WkTable for the conventions."""
    chart = sl_chart(problem, x0)
    return build_wk_chain(
        chart.h11, chart.h22, chart.a, x0, kmax, constants=constants,
        kind=chart.kind, phi=chart.phi,
    )


@dataclass(frozen=True)
class SLChart:
    """Canonical orientation of a scalar problem: h11 = 1/p not integrable
    at a, h22 = w integrable."""

    a: float
    b: float
    h11: CoefficientFn
    h22: CoefficientFn
    kind: str = "sl"
    phi: Optional[CoefficientFn] = None


def sl_chart(problem, x0=None):
    if isinstance(problem, SLChart):
        return problem
    if isinstance(problem, HamiltonianSpec):
        if not problem.is_diagonal():
            raise ValueError("certified chain construction requires diagonal H")
        return SLChart(problem.a, problem.b, problem.h11, problem.h22, kind="canonical")
    chart = getattr(problem, "sl_chart", None)
    if chart is None:
        raise TypeError(f"cannot build a scalar chart from {type(problem).__name__}")
    return chart()


# ---------------------------------------------------------------------------
# Delta
# ---------------------------------------------------------------------------

_DELTA_NMAX = 9


def _delta_from_hints(h11_hint, h22_hint):
    """Exact power-log chain; returns (Delta | None | UNDETERMINED, decisive)."""
    p1 = PowerLog(*h11_hint)
    p2 = PowerLog(*h22_hint)
    # the proven floor rule for p ~ w ~ x^alpha (no log factors)
    if (
        p1.m == 0.0
        and p2.m == 0.0
        and abs(p1.beta + p2.beta) < 1e-9
        and p2.beta >= 1.0 - 1e-12
    ):
        return int(math.floor((p2.beta + 1.0) / 2.0)), True
    # h11 ~ x^{-alpha}, h22 ~ 1: Delta = n on (2 - 1/n, 2 - 1/(n+1)], with the
    # interval taken right-closed so that the rule assigns a value on the
    # breakpoints as well
    if p1.m == 0.0 and p2.m == 0.0 and p2.beta == 0.0 and -2.0 < p1.beta <= -1.0:
        alpha = -p1.beta
        if alpha == 1.0:
            return 1, True
        return max(1, int(math.ceil(1.0 / (2.0 - alpha) - 1.0 - 1e-12))), True
    chain = PowerLog(0.0, 0.0)
    marginal_seen = False
    exponents = []
    for n in range(1, _DELTA_NMAX + 1):
        if n % 2 == 1:
            chain = integrate_to_base(p1 * chain)
        else:
            chain, verdict = integrate_from_endpoint(p2 * chain)
            if chain is None:
                return (UNDETERMINED if verdict is Verdict.MARGINAL else None), (
                    verdict is not Verdict.MARGINAL
                )
        weight = p2 if n % 2 == 1 else p1
        verdict = l2_verdict(chain, weight)
        exponents.append(2 * chain.beta + weight.beta)
        if verdict is Verdict.CONVERGES:
            return (UNDETERMINED if marginal_seen else n), not marginal_seen
        if verdict is Verdict.MARGINAL:
            marginal_seen = True
        if n >= 4 and exponents[-1] < -1.0 and exponents[-1] - exponents[-3] < 1e-9:
            # exponent chain has stalled strictly below the threshold
            return None, True
    return UNDETERMINED, False


def _delta_numeric_scalar(chart, x0):
    mesh = LeftMesh(chart.a, x0)
    ow = mesh.sample(chart.h11)
    ew = mesh.sample(chart.h22)
    chain = np.ones_like(mesh.t_nodes)
    marginal_seen = False
    exponents = []
    for n in range(1, _DELTA_NMAX + 1):
        if n % 2 == 1:
            chain, _ = mesh.integrate_to_base(ow * chain)
        else:
            chain, _, _ = mesh.integrate_from_endpoint(ew * chain, strict=False)
            if chain is None:
                return None
        weight = ew if n % 2 == 1 else ow
        beta = mesh.local_exponent(chain**2 * weight)
        exponents.append(beta)
        if abs(beta + 1.0) < EXPONENT_BAND:
            marginal_seen = True
        elif beta > -1.0:
            return UNDETERMINED if marginal_seen else n
        if n >= 4 and beta < -1.0 and abs(exponents[-1] - exponents[-3]) < 0.02:
            return None
    return UNDETERMINED


def _delta_nondiagonal(H, x0):
    """Heuristic: direct X_k recursion plus a Gram-matrix boundedness test."""
    mesh = LeftMesh(H.a, x0)
    h11 = mesh.sample(H.h11)
    h12 = mesh.sample(H.h12)
    h22 = mesh.sample(H.h22)
    # X_k' = J H X_{k-1} integrated from x0: components via integrate_to_base
    comps = [(np.ones_like(h11), np.zeros_like(h11))]
    grams = []
    for k in range(1, _DELTA_NMAX + 1):
        u, v = comps[-1]
        du = -(h12 * u + h22 * v)
        dv = h11 * u + h12 * v
        Fu, _ = mesh.integrate_to_base(du)
        Fv, _ = mesh.integrate_to_base(dv)
        comps.append((-Fu, -Fv))  # int_{x0}^x = -int_x^{x0}
        # Gram of the family in L2(H) restricted above depth t
        cut = mesh.order * (mesh.n_panels * 3 // 4)
        n = k + 1
        G = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                ui, vi = comps[i]
                uj, vj = comps[j]
                integrand = h11 * ui * uj + h12 * (ui * vj + vi * uj) + h22 * vi * vj
                F, _ = mesh.integrate_to_base(integrand)
                G[i, j] = G[j, i] = F[cut]
        grams.append(np.linalg.eigvalsh(G)[0])
        full = np.linalg.eigvalsh(
            np.array(
                [
                    [
                        mesh.integrate_to_base(
                            h11 * comps[i][0] * comps[j][0]
                            + h12 * (comps[i][0] * comps[j][1] + comps[i][1] * comps[j][0])
                            + h22 * comps[i][1] * comps[j][1]
                        )[0][-1]
                        for j in range(n)
                    ]
                    for i in range(n)
                ]
            )
        )[0]
        if full < 100.0 * max(grams[-1], 1e-12):
            return k
    return UNDETERMINED


def compute_Delta(problem, x0):
    """Classification report with the growth index Delta.

    Accepts a HamiltonianSpec (diagonal for certified Delta) or any object
    with an sl_chart() method (scalar problem frontends).
    """
    H = problem if isinstance(problem, HamiltonianSpec) else _chart_hamiltonian(problem)
    try:
        left = classify_endpoint(H, "left", x0)
    except Undecidable:
        left = EndpointClass("LimitPoint", math.inf)  # only used for reporting
    try:
        right = classify_endpoint(H, "right", x0)
    except Undecidable:
        right = EndpointClass("LimitPoint", math.inf)
    try:
        holds_I = check_I(H, x0)
    except Undecidable:
        holds_I = False
    try:
        holds_HS = check_HS(H, x0)
    except Undecidable:
        holds_HS = False

    if not (left.limit_point and right.limit_point and holds_I and holds_HS):
        return ClassificationReport(
            left, right, holds_I, holds_HS, None, False, "closed-form rule"
        )

    diagonal = H.is_diagonal()
    if diagonal and H.h11.hint is not None and H.h22.hint is not None:
        delta, decisive = _delta_from_hints(H.h11.hint, H.h22.hint)
        method = "closed-form rule"
        if not decisive and delta is UNDETERMINED:
            numeric = _delta_numeric_scalar(sl_chart(H), x0)
            if isinstance(numeric, int):
                delta, method = numeric, "numeric L2 test"
    elif diagonal:
        delta = _delta_numeric_scalar(sl_chart(H), x0)
        method = "numeric L2 test"
    else:
        delta = _delta_nondiagonal(H, x0)
        method = "numeric L2 test"

    in_class = isinstance(delta, int) and delta >= 1
    return ClassificationReport(left, right, holds_I, holds_HS, delta, in_class, method)


def _chart_hamiltonian(problem):
    chart = sl_chart(problem)
    return diagonal_hamiltonian(chart.a, chart.b, chart.h11, chart.h22)


# ---------------------------------------------------------------------------
# reparameterization
# ---------------------------------------------------------------------------


def reparameterize(H, gamma, gamma_prime, interval):
    """H2(x) = H1(gamma(x)) * gamma'(x) on the new interval.

    gamma must be an increasing bijection from the new interval onto
    (H.a, H.b); monotonicity is sampled.
    """
    a2, b2 = interval
    xs = np.linspace(a2 + (min(b2, a2 + 1e3) - a2) * 1e-6, min(b2, a2 + 1e3) * 0.999, 64)
    gp = np.asarray(gamma_prime(xs), dtype=float)
    if np.any(gp <= 0):
        raise ValueError("gamma must be strictly increasing")

    def entry(coeff):
        def fn(x):
            return np.asarray(coeff(gamma(x))) * np.asarray(gamma_prime(x))

        hint = None
        if coeff.hint is not None and _is_affine(gamma, gamma_prime, a2, b2):
            hint = coeff.hint  # affine change of variable keeps exponents
        return coefficient_from_callable(fn, hint=hint)

    return HamiltonianSpec(a2, b2, entry(H.h11), entry(H.h12), entry(H.h22))


def _is_affine(gamma, gamma_prime, a2, b2, n=16):
    hi = b2 if math.isfinite(b2) else a2 + 100.0
    xs = np.linspace(a2 + (hi - a2) * 1e-3, hi - (hi - a2) * 1e-3, n)
    gp = np.asarray(gamma_prime(xs), dtype=float)
    return np.allclose(gp, gp[0], rtol=1e-9, atol=0.0)


def trace_normalizing_map(H, x0):
    """Increasing map gamma with gamma'(t) = 1/tr H(gamma(t)), so that the
    reparameterized Hamiltonian has unit trace; returned as callables
    (gamma, gamma_prime) defined near x0 on the trace-arclength scale."""
    from scipy.integrate import quad
    from scipy.optimize import brentq

    def arclength(x):
        return quad(lambda s: float(H.trace(s)), x0, x, limit=200)[0]

    def gamma(t):
        def g(ti):
            lo, hi = x0, x0
            step = max(1e-3, abs(ti))
            while arclength(hi) < ti:
                hi += step
                step *= 2
            while arclength(lo) > ti:
                lo -= step
                step *= 2
                if lo <= H.a:
                    lo = H.a + (x0 - H.a) * 1e-12
                    break
            return brentq(lambda x: arclength(x) - ti, lo, hi, xtol=1e-14)

        if np.ndim(t) == 0:
            return g(float(t))
        return np.array([g(float(ti)) for ti in np.atleast_1d(t)])

    def gamma_prime(t):
        g = gamma(t)
        return 1.0 / H.trace(g)

    return gamma, gamma_prime
