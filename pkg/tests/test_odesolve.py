import math

import numpy as np
import pytest

from canspec.expressions import constant_coefficient, parse_coefficient
from canspec.hamiltonian import HamiltonianSpec, diagonal_hamiltonian
from canspec.odesolve import propagate, propagate_batch, propagate_collect, solve_scalar

ONE = constant_coefficient(1.0)
ZERO = constant_coefficient(0.0)
H_IDENTITY = HamiltonianSpec(0.0, 1.0, ONE, ZERO, ONE)

RNG = np.random.default_rng(7)


def test_identity_at_z_zero():
    fm = propagate(H_IDENTITY, 0.0, 0.0, 0.7, np.eye(2))
    assert np.allclose(fm.omega, np.eye(2), atol=1e-12)


def test_rotation_closed_form():
    # H = I: omega(x; z) = [[cos zx, sin zx], [-sin zx, cos zx]]
    z = 1.7 + 0.4j
    x = 0.8
    fm = propagate(H_IDENTITY, z, 0.0, x, np.eye(2), tol=1e-12)
    expected = np.array(
        [[np.cos(z * x), np.sin(z * x)], [-np.sin(z * x), np.cos(z * x)]]
    )
    assert np.allclose(fm.omega, expected, atol=1e-10)


def test_det_one_random_points():
    H = diagonal_hamiltonian(
        0.0, math.inf, parse_coefficient("x^(-0.5)"), parse_coefficient("1 + 0*x")
    )
    for _ in range(20):
        x = float(RNG.uniform(0.3, 3.0))
        z = complex(RNG.normal(), RNG.normal())
        fm = propagate(H, z, 0.25, x, np.eye(2), tol=1e-11)
        assert abs(fm.det - 1.0) < 1e-8


def test_composition():
    H = diagonal_hamiltonian(0.0, 5.0, parse_coefficient("x^(-0.4)"), ONE)
    z = 0.9 - 0.3j
    # rows are solutions, so transfer matrices compose on the right
    f1 = propagate(H, z, 0.5, 1.2, np.eye(2), tol=1e-12)
    f2 = propagate(H, z, 1.2, 2.4, np.eye(2), tol=1e-12)
    f12 = propagate(H, z, 0.5, 2.4, np.eye(2), tol=1e-12)
    assert np.allclose(f1.omega @ f2.omega, f12.omega, atol=1e-9)


def test_real_entries_for_real_z_diagonal():
    H = diagonal_hamiltonian(0.0, 5.0, parse_coefficient("x^(-1.2)"), ONE)
    fm = propagate(H, 1.3, 0.5, 2.0, np.eye(2), tol=1e-12)
    assert np.max(np.abs(fm.omega.imag)) < 1e-12


def test_conjugate_symmetry():
    H = diagonal_hamiltonian(0.0, 5.0, parse_coefficient("x^(-1.2)"), ONE)
    z = 0.8 + 0.6j
    f = propagate(H, z, 0.5, 2.0, np.eye(2), tol=1e-12)
    g = propagate(H, np.conj(z), 0.5, 2.0, np.eye(2), tol=1e-12)
    assert np.allclose(np.conj(f.omega), g.omega, atol=1e-10)


def test_scalar_schrodinger_sine():
    class P:
        V = staticmethod(lambda x: 0.0 * np.asarray(x))
        a, b = 0.0, math.inf

    sol = solve_scalar(P(), 1.0, 0.0, 2.0, (0.0, 1.0), tol=1e-12)
    u, up = sol.values[-1]
    assert u == pytest.approx(math.sin(2.0), abs=1e-10)
    assert up == pytest.approx(math.cos(2.0), abs=1e-10)


def test_scalar_sl_lambda_zero():
    class P:
        p = staticmethod(lambda x: np.asarray(x) ** 2)
        w = staticmethod(lambda x: np.asarray(x) ** 2)
        a, b = 0.0, math.inf

    # lambda = 0: y = c1 int_{x0}^x dt/p + c2
    sol = solve_scalar(P(), 0.0, 1.0, 3.0, (2.0, 1.5), tol=1e-12)
    y, py = sol.values[-1]
    assert py == pytest.approx(1.5, abs=1e-12)
    assert y == pytest.approx(2.0 + 1.5 * (1.0 - 1.0 / 3.0), abs=1e-10)


def test_wronskian_constant():
    class P:
        p = staticmethod(lambda x: 1.0 + 0.0 * np.asarray(x))
        w = staticmethod(lambda x: 1.0 + 0.3 * np.sin(np.asarray(x)))
        a, b = 0.0, 10.0

    lam = 2.3 + 0.4j
    xs = np.linspace(1.0, 9.0, 9)
    s1 = solve_scalar(P(), lam, 0.5, None, (1.0, 0.0), tol=1e-12, collect=xs)
    s2 = solve_scalar(P(), lam, 0.5, None, (0.0, 1.0), tol=1e-12, collect=xs)
    wr = s1.values[:, 0] * s2.values[:, 1] - s1.values[:, 1] * s2.values[:, 0]
    assert np.max(np.abs(wr - wr[0])) < 1e-10
    assert abs(wr[0] - 1.0) < 1e-10


def test_batch_matches_adaptive():
    H = diagonal_hamiltonian(0.0, math.inf, parse_coefficient("x^(-2)"),
                             parse_coefficient("x^2"))
    ts = np.array([0.5, 1.0, 2.0])
    init = np.stack([-ts * (0.01**3) / 3.0, np.ones_like(ts)]).astype(complex)
    out = propagate_batch(H, ts, 0.01, [1.5], init, pts_per_wave=48.0)
    for i, t in enumerate(ts):
        ref = propagate(H, t, 0.01, 1.5, init[:, i], tol=1e-12)
        assert np.allclose(out[0][:, i], ref.values[-1], atol=2e-7)


def test_scaled_collection_tracks_growth():
    H = diagonal_hamiltonian(0.0, math.inf, parse_coefficient("x^(-2)"),
                             parse_coefficient("x^2"))
    z = 40j
    pts = np.array([1.0, 2.0, 3.0])
    out, logs, err = propagate_collect(H, z, np.concatenate([[0.5], pts]),
                                       np.eye(2), tol=1e-10, scaled=True)
    # |solutions| grow like e^{|z| x}; the tracked scale absorbs it
    assert np.all(np.isfinite(out[-1]))
    total = math.log(np.max(np.abs(out[-1]))) + logs[-1]
    assert total == pytest.approx(40.0 * 2.5, rel=0.2)
