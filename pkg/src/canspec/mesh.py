"""Composite Gauss-Legendre meshes graded toward a singular endpoint.

The recursive function families (w_l chains, X_k chains, iterated
integrability tests) all reduce to repeated cumulative integration of
smooth, power-law-like functions on an interval with one singular end.
A geometric panel mesh with per-panel Legendre interpolation gives
spectral accuracy for such integrands and makes chains of arbitrary
depth cheap: every level is one vectorized sweep over the node set.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as npleg

from .asymptotics import EXPONENT_BAND


class TailDivergence(ValueError):
    """A cumulative integral from the singular endpoint does not converge."""


def _gauss_legendre(order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    vander = npleg.legvander(nodes, order - 1)
    to_coeff = np.linalg.inv(vander)
    return nodes, weights, to_coeff


class LeftMesh:
    """Mesh on (a, x0], panels geometric in t = x - a down to t_min."""

    def __init__(self, a, x0, t_min_rel=1e-13, ratio=0.8, order=12):
        self.a = float(a)
        self.x0 = float(x0)
        span = self.x0 - self.a
        if span <= 0:
            raise ValueError("x0 must lie to the right of a")
        t_min = span * t_min_rel
        bounds = [span]
        while bounds[-1] > t_min:
            bounds.append(bounds[-1] * ratio)
        self.t_bounds = np.array(bounds)  # decreasing, t-coordinates
        self.order = order
        xi, wq, self._to_coeff = _gauss_legendre(order)
        self._xi = xi
        # nodes per panel i: map [-1,1] -> [t_{i+1}, t_i]
        lo = self.t_bounds[1:]
        hi = self.t_bounds[:-1]
        self._half = 0.5 * (hi - lo)
        self._mid = 0.5 * (hi + lo)
        self.t_nodes = (self._mid[:, None] + self._half[:, None] * xi[None, :]).ravel()
        self.x_nodes = self.a + self.t_nodes
        self.n_panels = len(lo)

    # -- basic evaluation --------------------------------------------------

    def sample(self, fn):
        """Evaluate fn on all mesh nodes (returns flat array)."""
        vals = np.asarray(fn(self.x_nodes), dtype=float)
        if vals.shape != self.x_nodes.shape:
            vals = np.broadcast_to(vals, self.x_nodes.shape).copy()
        return vals

    def _panel_coeffs(self, nodal):
        v = nodal.reshape(self.n_panels, self.order)
        return v @ self._to_coeff.T  # Legendre coefficients per panel

    def integrate_to_base(self, nodal):
        """F with F(x) = int_x^{x0} f dt, as nodal values plus evaluator data.

        Returns (nodal_F, panel_tail) where panel_tail[i] = F at the lower
        panel bound t_{i+1}.
        """
        coeffs = self._panel_coeffs(nodal)
        # antiderivative from the panel's left edge (xi = -1)
        anti = np.apply_along_axis(lambda c: npleg.legint(c, lbnd=-1), 1, coeffs)
        full = npleg.legval(1.0, anti.T, tensor=False) * self._half
        upper_cum = np.concatenate([[0.0], np.cumsum(full)])  # F at t_bounds
        part = np.stack(
            [npleg.legval(self._xi, anti[i]) * self._half[i] for i in range(self.n_panels)]
        )
        nodal_F = (upper_cum[:-1, None] + (full[:, None] - part)).ravel()
        return nodal_F, upper_cum

    def integrate_from_endpoint(self, nodal, strict=True):
        """G with G(x) = int_a^x f dt, including an extrapolated tail.

        The block below the deepest panel is estimated from the locally
        fitted power; a clearly divergent tail raises TailDivergence when
        strict, otherwise returns None.
        """
        coeffs = self._panel_coeffs(nodal)
        anti = np.apply_along_axis(lambda c: npleg.legint(c, lbnd=-1), 1, coeffs)
        full = npleg.legval(1.0, anti.T, tensor=False) * self._half
        beta = self.local_exponent(nodal)
        t_last = self.t_bounds[-1]
        f_last = abs(nodal[-1])
        if beta <= -1.0 + EXPONENT_BAND:
            if strict:
                raise TailDivergence(
                    f"integral from endpoint diverges (local exponent {beta:.3f})"
                )
            return None, None, np.inf
        tail = np.sign(nodal[-1]) * f_last * t_last / (beta + 1.0)
        tail_err = abs(tail) * min(1.0, 10.0 * EXPONENT_BAND / max(beta + 1.0, 1e-3))
        # lower_cum[i] = G at t_bounds[i]; panels j >= i lie below t_bounds[i]
        lower_cum = tail + np.concatenate([np.cumsum(full[::-1])[::-1], [0.0]])
        part = np.stack(
            [npleg.legval(self._xi, anti[i]) * self._half[i] for i in range(self.n_panels)]
        )
        nodal_G = (lower_cum[1:, None] + part).ravel()
        return nodal_G, lower_cum, tail_err

    def eval_nodal(self, nodal, x):
        """Evaluate a nodal array at arbitrary points of (a + t_min, x0]."""
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        t = x_arr - self.a
        out = np.empty_like(t)
        coeffs = self._panel_coeffs(nodal)
        # panel i covers [t_bounds[i+1], t_bounds[i]]
        idx = np.clip(np.searchsorted(-self.t_bounds, -t, side="left") - 1,
                      0, self.n_panels - 1)
        for i in np.unique(idx):
            sel = idx == i
            xi = (t[sel] - self._mid[i]) / self._half[i]
            xi = np.clip(xi, -1.0, 1.0)
            out[sel] = npleg.legval(xi, coeffs[i])
        if np.ndim(x) == 0:
            return float(out[0])
        return out

    def local_exponent(self, nodal, depth_panels=12):
        """Fit beta in |f| ~ c t^beta over the deepest panels."""
        n = min(depth_panels * self.order, len(nodal) - 1)
        vals = np.abs(nodal[-n:])
        ts = self.t_nodes[-n:]
        good = vals > 0
        if good.sum() < 8:
            return np.inf
        lt, lv = np.log(ts[good]), np.log(vals[good])
        return float(np.polyfit(lt, lv, 1)[0])

    def log_slope_series(self, nodal, per=24):
        """Window-wise d ln f / d ln t, deepest windows last."""
        slopes = []
        n = len(nodal)
        for start in range(0, n - per, per):
            seg = slice(n - start - per, n - start)
            vals = np.abs(nodal[seg])
            if np.any(vals == 0):
                continue
            slopes.append(float(np.polyfit(np.log(self.t_nodes[seg]), np.log(vals), 1)[0]))
        return slopes


class RightMesh:
    """Mesh on [x0, b), geometric toward b (or toward infinity)."""

    def __init__(self, x0, b, t_max=1e12, ratio=0.8, order=12):
        self.x0 = float(x0)
        self.b = float(b)
        if np.isinf(self.b):
            scale = max(1.0, abs(self.x0))
            shifted = [scale]
            while shifted[-1] < t_max:
                shifted.append(shifted[-1] / ratio)
            self.x_bounds = self.x0 - scale + np.array(shifted)
        else:
            span = self.b - self.x0
            t = [span]
            while t[-1] > span * 1e-13:
                t.append(t[-1] * ratio)
            self.x_bounds = self.b - np.array(t)
        xi, wq, self._to_coeff = _gauss_legendre(order)
        self.order = order
        self._xi = xi
        lo = self.x_bounds[:-1]
        hi = self.x_bounds[1:]
        self._half = 0.5 * (hi - lo)
        self._mid = 0.5 * (hi + lo)
        self.x_nodes = (self._mid[:, None] + self._half[:, None] * xi[None, :]).ravel()
        self.n_panels = len(lo)

    def sample(self, fn):
        vals = np.asarray(fn(self.x_nodes), dtype=float)
        if vals.shape != self.x_nodes.shape:
            vals = np.broadcast_to(vals, self.x_nodes.shape).copy()
        return vals

    def panel_integrals(self, nodal):
        coeffs = nodal.reshape(self.n_panels, self.order) @ self._to_coeff.T
        anti = np.apply_along_axis(lambda c: npleg.legint(c, lbnd=-1), 1, coeffs)
        return npleg.legval(1.0, anti.T, tensor=False) * self._half

    def endpoint_exponent(self, nodal, depth_panels=12):
        """Fit the growth/decay exponent toward b.

        For b = inf the exponent is with respect to x; for finite b with
        respect to (b - x).
        """
        n = min(depth_panels * self.order, len(nodal) - 1)
        vals = np.abs(nodal[-n:])
        good = vals > 0
        if good.sum() < 8:
            return -np.inf
        if np.isinf(self.b):
            coord = np.log(self.x_nodes[-n:][good])
        else:
            coord = np.log(self.b - self.x_nodes[-n:][good])
        return float(np.polyfit(coord, np.log(vals[good]), 1)[0])
