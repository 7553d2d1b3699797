"""Regularized boundary values at the singular left endpoint and the
normalized fundamental pair (theta, phi).

Everything here operates in canonical coordinates of the oriented chart
(h11 not integrable at a, h22 integrable).  The boundary value of a
solution is the pair (r, s): r is the limit of the first component, s the
limit of the regularizing bracket built from the w-chain.

Numerically the bracket is not extrapolated from raw solution samples:
its terms cancel against each other at depth, which amplifies solver
roundoff like 1/t.  Instead its x-derivative telescopes to
-z^(D+1) w_D^T H psi minus an explicit chain-product term, so the bracket
is recovered by one cumulative quadrature from the base point and only a
short, well-conditioned extrapolation remains.  phi is fixed by
(r, s) = (0, 1) and built from its convergent expansion at a; theta is
never initialized from its divergent asymptotics but assembled as a
linear combination.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .extrapolate import limit_geometric
from .hamiltonian import (
    HamiltonianSpec,
    UNDETERMINED,
    WkTable,
    build_wk_chain,
    compute_Delta,
    diagonal_hamiltonian,
    sl_chart,
)
from .mesh import LeftMesh
from .odesolve import _canonical_rhs, _integrate, _step_bound


class NonConvergent(RuntimeError):
    """A singular-limit extrapolation failed its Cauchy test."""


def rbv_grid(a, x0, depth=20):
    t0 = 0.4 * (x0 - a)
    return a + t0 * 0.5 ** np.arange(depth, dtype=float)


@dataclass
class PairCertificate:
    rbv_theta: tuple
    rbv_phi: tuple
    wronskian_residual: float
    phi_series_cut: float
    rbv_error: float


class RegularizedBoundaryMap:
    """Evaluator of the boundary pair (r, s) in integral form.

    Holds the chain table on its mesh together with nodal H values and the
    precomputed chain-product derivative pieces.
    """

    def __init__(self, model):
        self.model = model
        self.x0 = model.x0
        self.a = model.a
        self.Delta = model.Delta
        self.table = model.table
        self.mesh = model.mesh
        self.grid = rbv_grid(self.a, self.x0)
        self._h11 = self.mesh.sample(model.chart.h11)
        self._h22 = self.mesh.sample(model.chart.h22)
        # scalar chain values on the mesh, w_0 .. w_{2 Delta}
        self._w = [np.ones_like(self.mesh.t_nodes)] + [
            self.table.nodal[k] for k in range(1, 2 * self.Delta + 1)
        ]
        self.shift_polynomial = _constants_shift(
            self.table, model.chart, self.x0, self.mesh
        )

    # -- direct bracket (reference path, exact-sample friendly) ----------

    def w_at(self, k, x):
        return self.table.w(k, x)

    def bracket_direct(self, values, z, r_limit, xs=None):
        """The A-form bracket at grid points from sampled solution values."""
        z = complex(z)
        D = self.Delta
        xs = self.grid if xs is None else xs
        w = {k: self.w_at(k, xs) for k in range(0, 2 * D + 1)}
        psi1, psi2 = values[:, 0], values[:, 1]
        total = np.zeros(len(xs), dtype=complex)
        for l in range(0, D + 1):
            corr1 = np.zeros(len(xs), dtype=complex)
            corr2 = np.zeros(len(xs), dtype=complex)
            for k in range(D + 1, 2 * D - l + 1):
                if k % 2 == 0:
                    corr1 = corr1 + z**k * w[k]
                else:
                    corr2 = corr2 - z**k * w[k]
            u1 = psi1 - r_limit * corr1
            u2 = psi2 - r_limit * corr2
            term = -w[l] * (u2 if l % 2 == 0 else u1)
            total = total + z**l * term
        return -total

    # -- integral form -----------------------------------------------------

    def _wvec(self, k):
        """Canonical chain vector at mesh nodes: (w_k, 0) even, (0, -w_k) odd."""
        zeros = np.zeros_like(self._w[0])
        return (self._w[k], zeros) if k % 2 == 0 else (zeros, -self._w[k])

    def _pair_H(self, ka, kb):
        """w_ka^T H w_kb on mesh nodes (diagonal H)."""
        a1, a2 = self._wvec(ka)
        b1, b2 = self._wvec(kb)
        return self._h11 * a1 * b1 + self._h22 * a2 * b2

    def _q_derivative(self, z):
        """d/dx of the chain-correction pairing sum."""
        D = self.Delta
        out = np.zeros_like(self._w[0], dtype=complex)
        for l in range(0, D + 1):
            for k in range(D + 1, 2 * D - l + 1):
                term = np.zeros_like(out)
                if l >= 1:
                    term = term + self._pair_H(l - 1, k)
                term = term - self._pair_H(l, k - 1)
                out = out + z ** (l + k) * term
        return out

    def _bracket_at_base(self, psi_x0, z, r_limit):
        D = self.Delta
        z = complex(z)
        total = 0.0 + 0.0j
        for l in range(0, D + 1):
            corr1 = 0.0 + 0.0j
            corr2 = 0.0 + 0.0j
            for k in range(D + 1, 2 * D - l + 1):
                wk = self.w_at(k, self.x0)
                if k % 2 == 0:
                    corr1 += z**k * wk
                else:
                    corr2 -= z**k * wk
            u1 = psi_x0[0] - r_limit * corr1
            u2 = psi_x0[1] - r_limit * corr2
            wl = self.w_at(l, self.x0)
            total += z**l * (-wl * (u2 if l % 2 == 0 else u1))
        return total

    def rbv_from_nodal(self, psi_nodal, psi_x0, z, t_stop_rel=1e-6):
        """Boundary pair from solution values at the mesh nodes.

        psi_nodal: array (2, n_nodes), entries below the stop depth unused.
        Returns (r, s, err).
        """
        z = complex(z)
        if z == 0:
            return complex(psi_x0[0]), complex(psi_x0[1]), 0.0
        D = self.Delta
        t = self.mesh.t_nodes
        usable = t >= t_stop_rel * (self.x0 - self.a)
        xs_grid = self.grid[self.grid - self.a >= t_stop_rel * (self.x0 - self.a)]
        # r: limit of the first component, clean and fast
        order = np.argsort(-(t[usable]))
        r_seq_x = self.grid
        r_vals = _interp_nodal_columns(self.mesh, psi_nodal, usable, xs_grid)
        r, r_err = limit_geometric(r_vals[:, 0], 0.5)
        # integrand of the telescoped bracket derivative
        wD1, wD2 = self._wvec(D)
        Hpsi = (
            wD1 * self._h11 * psi_nodal[0]
            + wD2 * self._h22 * psi_nodal[1]
        )
        g = -(z ** (D + 1)) * Hpsi - r * self._q_derivative(z)
        g = np.where(usable, g, 0.0)
        F_re, _ = self.mesh.integrate_to_base(np.ascontiguousarray(g.real))
        F_im, _ = self.mesh.integrate_to_base(np.ascontiguousarray(g.imag))
        B0 = self._bracket_at_base(psi_x0, z, r)
        B_vals = B0 - (
            self.mesh.eval_nodal(F_re, xs_grid)
            + 1j * self.mesh.eval_nodal(F_im, xs_grid)
        )
        s_neg, s_err = limit_geometric(B_vals, 0.5)
        s = -s_neg
        scale = max(abs(s), abs(r), 1.0)
        if not (math.isfinite(s_err) and s_err < 1e-3 * scale):
            raise NonConvergent(
                f"regularized boundary bracket failed the Cauchy test (err={s_err:.2e})"
            )
        return r, s, float(max(r_err, s_err))


def _interp_nodal_columns(mesh, nodal2, usable, xs):
    vals = np.empty((len(xs), 2), dtype=complex)
    for c in range(2):
        col = np.where(usable, nodal2[c], 0.0)
        vals[:, c] = mesh.eval_nodal(col.real, xs) + 1j * mesh.eval_nodal(col.imag, xs)
    return vals


# ---------------------------------------------------------------------------
# the fundamental pair
# ---------------------------------------------------------------------------


class FundamentalPair:
    """theta and phi columns anchored at the base point, with cached
    propagation.  Y(x) = [[theta1, phi1], [theta2, phi2]] scaled by
    exp(log_scale)."""

    def __init__(self, model, z, Y0, certificate):
        self.model = model
        self.z = complex(z)
        self.x0 = model.x0
        self.certificate = certificate
        self._anchors = [(model.x0, np.asarray(Y0, dtype=complex), 0.0)]

    def eval(self, x, tol=None):
        tol = tol or self.model.tol
        below = [aa for aa in self._anchors if aa[0] <= x]
        x_a, Y, ls = max(below, key=lambda rr: rr[0]) if below else min(
            self._anchors, key=lambda rr: rr[0]
        )
        if math.isclose(x_a, x, rel_tol=1e-14, abs_tol=1e-300):
            return Y, ls
        H = self.model.H
        f = _canonical_rhs(H, self.z)
        bound = _step_bound(H, self.z, H.a, H.b)
        # Y is in column convention (columns are solutions), matching the
        # integrator's matrix state directly
        y, err, _ = _integrate(f, x_a, x, Y.ravel(), tol, tol * 1e-3, bound)
        Ynew = y.reshape(2, 2)
        m = float(np.max(np.abs(Ynew)))
        if m > 1e50 or (0 < m < 1e-50):
            Ynew = Ynew / m
            ls += math.log(m)
        if x > x_a:
            insort(self._anchors, (x, Ynew, ls), key=lambda rr: rr[0])
        return Ynew, ls

    def theta(self, x):
        Y, ls = self.eval(x)
        return Y[:, 0] * math.exp(ls)

    def phi(self, x):
        Y, ls = self.eval(x)
        return Y[:, 1] * math.exp(ls)

    def wronskian_residual(self, x):
        Y, ls = self.eval(x)
        return abs(complex(np.linalg.det(Y)) * math.exp(2 * ls) - 1.0)


class CanonicalModel:
    """Everything derived from one problem: oriented chart, classification,
    chain table, boundary map and the fundamental-pair factory."""

    def __init__(self, problem, x0=None, tol=1e-10, wk_constants=None):
        self.problem = problem
        chart = sl_chart(problem)
        self.chart = chart
        self.a = chart.a
        self.b = chart.b
        self.x0 = float(x0) if x0 is not None else _default_x0(chart)
        self.tol = tol
        self.H = (
            problem
            if isinstance(problem, HamiltonianSpec)
            else diagonal_hamiltonian(chart.a, chart.b, chart.h11, chart.h22)
        )
        self.report = compute_Delta(self.H, self.x0)
        if not self.report.in_class:
            if self.report.Delta is UNDETERMINED:
                raise ValueError("growth index undetermined; cannot certify the model")
            raise ValueError("problem is not in the treatable class")
        self.Delta = self.report.Delta
        self.mesh = LeftMesh(self.a, self.x0)
        self.table = build_wk_chain(
            chart.h11, chart.h22, self.a, self.x0, 2 * self.Delta,
            constants=wk_constants, kind=chart.kind, phi=chart.phi, mesh=self.mesh,
        )
        self.map = RegularizedBoundaryMap(self)
        self._phi_chain = self._build_phi_chain(kmax=6)
        self._pairs = {}
        self._descent_nodes = np.sort(
            np.concatenate(
                [
                    self.mesh.x_nodes[
                        self.mesh.t_nodes >= 1e-6 * (self.x0 - self.a)
                    ],
                    self.map.grid[self.map.grid - self.a >= 1e-6 * (self.x0 - self.a)],
                ]
            )
        )[::-1]

    # -- phi via its convergent expansion at a ---------------------------

    def _build_phi_chain(self, kmax):
        V = [np.ones_like(self.mesh.t_nodes)]
        h11 = self.map._h11
        h22 = self.map._h22
        for k in range(1, kmax + 1):
            weight = h22 if k % 2 == 1 else h11
            vals, _, _ = self.mesh.integrate_from_endpoint(weight * V[-1])
            V.append(vals)
        return V

    def phi_series(self, x, z, kmax=6):
        z = complex(z)
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        comp1 = np.zeros(len(x_arr), dtype=complex)
        comp2 = np.ones(len(x_arr), dtype=complex)
        for k in range(1, kmax + 1):
            Vk = self.mesh.eval_nodal(self._phi_chain[k], x_arr)
            sign = -1.0 if (k % 4) in (1, 2) else 1.0
            if k % 2 == 1:
                comp1 = comp1 + sign * z**k * Vk
            else:
                comp2 = comp2 + sign * z**k * Vk
        return np.stack([comp1, comp2], axis=-1)

    def phi_series_cut(self, z, kmax=6, tol=None):
        """Largest descent point where the dropped expansion tail is
        negligible at the requested tolerance."""
        za = abs(complex(z))
        pts = self._descent_nodes
        if za == 0.0:
            return float(pts[0])
        budget = 0.01 * (tol or self.tol)
        vals = np.abs(self.mesh.eval_nodal(self._phi_chain[kmax], pts)) * za**kmax
        ok = vals < budget
        if not np.any(ok):
            return float(pts[-1])
        return float(pts[np.argmax(ok)])

    # -- boundary values of a user-supplied solution ----------------------

    def rbv(self, sol, z):
        """Boundary pair of a canonical solution given as a callable
        x -> (psi1, psi2) or as precomputed nodal values."""
        if callable(sol):
            vals = np.asarray(
                [sol(x) for x in self.mesh.x_nodes], dtype=complex
            ).T
            psi_x0 = np.asarray(sol(self.x0), dtype=complex)
        else:
            vals, psi_x0 = sol
        return self.map.rbv_from_nodal(vals, psi_x0, z)

    # -- pair construction -------------------------------------------------

    def pair(self, z, tol=None):
        z = complex(z)
        tol = tol or self.tol
        key = (z.real, z.imag)
        hit = self._pairs.get(key)
        if hit is None or hit[1] > tol:
            self._pairs[key] = (self._make_pair(z, tol), tol)
        return self._pairs[key][0]

    def _descend(self, f, bound, y_start, x_start, tol):
        """Propagate downward from x_start collecting at descent nodes below."""
        nodal = np.zeros((2, len(self.mesh.x_nodes)), dtype=complex)
        y = np.asarray(y_start, dtype=complex).copy()
        x_here = float(x_start)
        err = 0.0
        node_ix = {x: i for i, x in enumerate(self.mesh.x_nodes)}
        for xg in self._descent_nodes:
            if xg > x_start:
                continue
            if not math.isclose(xg, x_here, rel_tol=1e-15):
                y, e, _ = _integrate(f, x_here, xg, y, tol, tol * 1e-3, bound)
                err += e
                x_here = xg
            i = node_ix.get(xg)
            if i is not None:
                nodal[:, i] = y
        return nodal, err

    def _make_pair(self, z, tol):
        if z == 0:
            cert = PairCertificate((1.0, 0.0), (0.0, 1.0), 0.0, self.x0, 0.0)
            return FundamentalPair(self, 0.0, np.eye(2, dtype=complex), cert)
        f = _canonical_rhs(self.H, z)
        bound = _step_bound(self.H, z, self.a, self.b)
        x_cut = self.phi_series_cut(z, tol=tol)
        # phi: series below the cut, propagated above it
        phi_nodal = np.zeros((2, len(self.mesh.x_nodes)), dtype=complex)
        below = self.mesh.x_nodes <= x_cut
        phi_nodal[:, below] = self.phi_series(self.mesh.x_nodes[below], z).T
        y = self.phi_series(np.array([x_cut]), z)[0].astype(complex)
        x_here = x_cut
        err = 0.0
        for i in np.argsort(self.mesh.x_nodes):
            xg = self.mesh.x_nodes[i]
            if xg <= x_cut:
                continue
            y, e, _ = _integrate(f, x_here, xg, y, tol, tol * 1e-3, bound)
            err += e
            phi_nodal[:, i] = y
            x_here = xg
        y, e, _ = _integrate(f, x_here, self.x0, y, tol, tol * 1e-3, bound)
        phi_x0 = y.copy()
        # psi from unit data at x0, integrated down through the mesh
        for init in ((1.0, 0.0), (1.0, 1.0), (0.0, 1.0)):
            psi_x0 = np.array(init, dtype=complex)
            psi_nodal, e2 = self._descend(f, bound, psi_x0, self.x0, tol)
            r, s, rbv_err = self.map.rbv_from_nodal(psi_nodal, psi_x0, z)
            if abs(r) > 1e-6 * max(1.0, float(np.max(np.abs(psi_nodal[0])))):
                break
        else:
            raise NonConvergent("all trial solutions had vanishing first limit")
        theta_x0 = (psi_x0 - s * phi_x0) / r
        Y0 = np.stack([theta_x0, phi_x0], axis=1)
        r_phi, s_phi, e_phi = self.map.rbv_from_nodal(phi_nodal, phi_x0, z)
        theta_nodal = (psi_nodal - s * phi_nodal) / r
        theta_b = (psi_x0 - s * phi_x0) / r
        r_th, s_th, e_th = self.map.rbv_from_nodal(theta_nodal, theta_b, z)
        cert = PairCertificate(
            (complex(r_th), complex(s_th)),
            (complex(r_phi), complex(s_phi)),
            abs(complex(np.linalg.det(Y0)) - 1.0),
            x_cut,
            max(rbv_err, e_phi, e_th),
        )
        return FundamentalPair(self, z, Y0, cert)


def _default_x0(chart):
    if math.isfinite(chart.b):
        return chart.a + 0.5 * (chart.b - chart.a)
    return chart.a + 1.0


def _constants_shift(table, chart, x0, mesh):
    """Real polynomial added to the boundary bracket by nonzero odd-chain
    constants: the lambda^k coefficient sums c_{2k+1-2i} times endpoint
    limits of the auxiliary v_{2i} chain."""
    consts = table.constants
    if not consts or all(v == 0.0 for v in consts.values()):
        return ()
    D = table.kmax // 2
    h11 = mesh.sample(chart.h11)
    h22 = mesh.sample(chart.h22)
    v_limits = [1.0]
    v = np.ones_like(mesh.t_nodes)
    for _ in range(1, D):
        inner, _, _ = mesh.integrate_from_endpoint(h22 * v)
        v, _ = mesh.integrate_to_base(h11 * inner)
        v_limits.append(float(v[-1]))
    coeffs = []
    for k in range(D):
        c = 0.0
        for i in range(k + 1):
            c += consts.get(2 * k + 1 - 2 * i, 0.0) * v_limits[i]
        coeffs.append(c)
    return tuple(coeffs)
