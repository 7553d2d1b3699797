"""Limits of sequences sampled on a geometric grid approaching an endpoint.

The regularized boundary expressions converge at coefficient-dependent
algebraic rates that are not known a priori.  On a grid t_j = t_0 r^j the
leading error c t^g shrinks by the constant factor r^g per step, so the
rate can be estimated from successive differences and eliminated by
geometric Richardson steps; iterating handles the next-order terms.
"""

from __future__ import annotations

import math

import numpy as np


def limit_geometric(values, ratio, max_levels=6):
    """Extrapolate v_j -> L for v_j sampled at t_j = t_0 * ratio^j.

    Returns (limit, error_estimate).  Works for complex sequences.  The
    tail is truncated where successive differences stop shrinking
    (roundoff floor), and each Richardson level re-estimates the decay
    order from the difference ratios.
    """
    v = np.asarray(values, dtype=complex)
    if len(v) == 0:
        raise ValueError("empty sequence")
    if len(v) == 1:
        return complex(v[0]), math.inf
    scale = float(np.max(np.abs(v))) or 1.0
    v = _truncate_at_noise(v, scale)
    best = complex(v[-1])
    best_err = abs(v[-1] - v[-2]) if len(v) > 1 else math.inf
    for _ in range(max_levels):
        if len(v) < 3:
            break
        d = np.diff(v)
        mag = np.abs(d)
        if mag[-1] <= 1e-15 * scale:
            return complex(v[-1]), float(max(mag[-1], 1e-16 * scale))
        q = _decay_factor(d, ratio)
        if q is None or not (1e-8 < q < 0.95):
            break
        v = v[1:] + (v[1:] - v[:-1]) * q / (1.0 - q)
        v = _truncate_at_noise(v, scale)
        err = abs(v[-1] - v[-2]) if len(v) > 1 else abs(d[-1])
        if err < best_err:
            best, best_err = complex(v[-1]), float(err)
    return best, float(best_err)


def _truncate_at_noise(v, scale):
    """Cut the sequence where successive differences spike back up above
    their running minimum: beyond that point cancellation noise (which
    grows toward the endpoint) dominates the algebraic decay."""
    v = np.asarray(v)
    d = np.abs(np.diff(v))
    if len(d) < 4:
        return v
    run_min = d[0]
    for j in range(1, len(d)):
        if d[j] <= run_min:
            run_min = d[j]
        elif d[j] > 3.0 * run_min and run_min < 1e-4 * scale:
            return v[: j + 1]
    return v


def _decay_factor(d, ratio):
    """Median ratio of successive differences: estimates ratio^order."""
    mag = np.abs(d)
    good = (mag[1:] > 0) & (mag[:-1] > 0)
    if good.sum() < 2:
        return None
    r = mag[1:][good] / mag[:-1][good]
    q = float(np.median(r[-4:] if len(r) >= 4 else r))
    return q if np.isfinite(q) else None


def richardson_delta(values, deltas, order=1):
    """Extrapolate f(delta) -> f(0) assuming a leading O(delta^order) error.

    deltas must shrink geometrically; returns (limit, error_estimate) and
    degrades gracefully when increments fall below noise (returns the last
    stable value).
    """
    v = [complex(x) for x in values]
    d = list(map(float, deltas))
    if len(v) == 1:
        return v[0], math.inf
    table = [v]
    for m in range(1, len(v)):
        prev = table[-1]
        row = []
        for i in range(len(prev) - 1):
            r = (d[i] / d[i + m]) ** order
            row.append(prev[i + 1] + (prev[i + 1] - prev[i]) / (r - 1.0))
        table.append(row)
        if len(row) >= 2 and abs(row[-1] - row[-2]) > abs(prev[-1] - prev[-2]):
            table.pop()
            break
    last = table[-1]
    if len(last) >= 2:
        return last[-1], abs(last[-1] - last[-2])
    return last[-1], abs(table[0][-1] - table[0][-2])
