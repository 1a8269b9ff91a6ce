import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from boltz2d.errors import ConfigError, DomainError
from boltz2d.kernel import (
    HALF_PI, KernelParams, deviation_matrix, deviation_matrix_deriv, drift_integral,
    eval_b, eval_G, eval_vartheta, eval_vartheta_deriv, post_collision,
    vartheta_envelope, vartheta_prime_signed,
)

KP = KernelParams(0.75, 0.25)


def test_params_defaults_and_validation():
    assert KP.delta == pytest.approx(0.875)
    assert 1 / KP.delta < KP.eta0 < 1 / 0.75
    for g, n in [(0.0, 0.2), (1.0, 0.2), (0.5, 0.5), (0.5, 0.0)]:
        with pytest.raises(ConfigError):
            KernelParams(g, n)
    with pytest.raises(ConfigError):
        KernelParams(0.75, 0.25, delta=0.7)
    with pytest.raises(ConfigError):
        KernelParams(0.75, 0.25, eta0=2.0)
    with pytest.raises(ConfigError):
        KernelParams.from_s(5)


def test_from_s_exact():
    kp = KernelParams.from_s(15)
    assert kp.exact_gamma_nu() == (Fraction(5, 7), Fraction(1, 7))
    assert kp.gamma == pytest.approx(5 / 7, abs=1e-15)


def test_b_values():
    assert eval_b(HALF_PI, KP) == pytest.approx(0.5686566911959909, rel=1e-14)
    th = np.linspace(0.01, HALF_PI, 50)
    assert np.array_equal(eval_b(-th, KP), eval_b(th, KP))
    with pytest.raises(DomainError):
        eval_b(0.0, KP)
    with pytest.raises(DomainError):
        eval_b(2.0, KP)


def test_G_values_and_quadrature_oracle():
    assert eval_G(HALF_PI, KP) == 0.0
    assert eval_G(0.1, KP) == pytest.approx(3.540142, abs=5e-7)
    assert eval_G(0.1, KP) > eval_G(0.2, KP)
    for nu in (0.05, 0.25, 0.45):
        kp = KernelParams(0.9, nu)
        for x in np.geomspace(1e-3, HALF_PI, 20):
            ref, _ = integrate.quad(lambda t: t ** (-1 - nu), x, HALF_PI, epsabs=1e-13, epsrel=1e-13)
            assert abs(eval_G(x, kp) - ref) <= 1e-8
    with pytest.raises(DomainError):
        eval_G(0.0, KP)


def test_round_trip_log_grid():
    z = np.geomspace(1e-6, 1e8, 2000)
    for nu in (0.02, 0.1, 0.25, 0.49):
        kp = KernelParams(0.9, nu)
        err = np.abs(eval_G(eval_vartheta(z, kp), kp) - z)
        assert np.all(err <= 1e-10 * (1 + z))
    assert eval_vartheta(0.0, KP) == HALF_PI
    assert eval_vartheta(eval_G(0.1, KP), KP) == pytest.approx(0.1, rel=1e-13)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_vartheta_odd(z):
    assert eval_vartheta(-z, KP) == -eval_vartheta(z, KP) or z == 0.0


def test_vartheta_prime_fd_oracle():
    h = 1e-6
    fd = (eval_vartheta(1 + h, KP) - eval_vartheta(1 - h, KP)) / (2 * h)
    assert eval_vartheta_deriv(1.0, 1, KP) == pytest.approx(fd, rel=1e-8)
    assert eval_vartheta_deriv(1.0, 1, KP) == pytest.approx(-0.512042, abs=1e-6)
    z = np.geomspace(1e-3, 1e3, 30)
    fd2 = (eval_vartheta_deriv(z * (1 + 1e-6), 1, KP) - eval_vartheta_deriv(z * (1 - 1e-6), 1, KP)) / (2e-6 * z)
    assert np.allclose(eval_vartheta_deriv(z, 2, KP), fd2, rtol=1e-6)
    assert np.all(eval_vartheta_deriv(z, 1, KP) < 0)
    assert np.allclose(vartheta_prime_signed(-z, KP), eval_vartheta_deriv(z, 1, KP))
    with pytest.raises(DomainError):
        eval_vartheta_deriv(1.0, 3, KP)
    with pytest.raises(DomainError):
        eval_vartheta_deriv(0.0, 1, KP)


def test_vartheta_prime_is_reciprocal_kernel():
    z = np.geomspace(1e-3, 1e5, 200)
    lhs = np.abs(eval_vartheta_deriv(z, 1, KP))
    rhs = 1.0 / eval_b(eval_vartheta(z, KP), KP)
    assert np.allclose(lhs, rhs, rtol=1e-12)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_vartheta_envelopes_finite(order):
    env = vartheta_envelope(KP, order=order)
    assert 0 < env["c"] <= env["C"] < np.inf
    # the ratio saturates: extending the grid by two decades does not move it
    wider = vartheta_envelope(KP, z_grid=np.logspace(-3, 8, 500), order=order)
    assert wider["ratio"] == pytest.approx(env["ratio"], rel=1e-2)


@given(st.floats(-1e7, 1e7, allow_nan=False), st.floats(1e-4, 0.999))
def test_angle_cutoff_equivalence(z, zeta):
    lhs = abs(eval_vartheta(z, KP)) > zeta
    rhs = abs(z) < eval_G(zeta, KP)
    # avoid the boundary where rounding decides
    if abs(abs(z) - eval_G(zeta, KP)) > 1e-9 * (1 + abs(z)):
        assert lhs == rhs


def test_geometry_identities_random():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        th = rng.uniform(-HALF_PI, HALF_PI)
        X = rng.normal(size=2) * rng.uniform(0.1, 10)
        A = deviation_matrix(th).matrix
        assert abs(np.sum((A @ X) ** 2) - 0.5 * (1 - math.cos(th)) * X @ X) <= 1e-12 * (1 + X @ X)
        I_A = np.eye(2) + A
        assert abs(np.linalg.norm(I_A, 2) ** 2 - 0.5 * (1 + math.cos(th))) <= 1e-12
        assert abs(np.linalg.norm(np.linalg.inv(I_A), 2) ** 2 - 2 / (1 + math.cos(th))) <= 1e-12
        v, vs = rng.normal(size=2), rng.normal(size=2)
        R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        vp, vsp = post_collision(v, vs, th)
        assert np.allclose(vp, 0.5 * (v + vs) + R @ (0.5 * (v - vs)), atol=1e-12, rtol=0)
        assert np.allclose(vsp, 0.5 * (v + vs) - R @ (0.5 * (v - vs)), atol=1e-12, rtol=0)


def test_deviation_matrix_examples():
    assert np.array_equal(deviation_matrix(0.0).matrix, np.zeros((2, 2)))
    assert np.linalg.norm(deviation_matrix(HALF_PI).matrix @ [1.0, 0.0]) == pytest.approx(2 ** -0.5, abs=1e-15)
    h = 1e-6
    for th in (-1.2, 0.0, 0.4):
        fd = (deviation_matrix(th + h).matrix - deviation_matrix(th - h).matrix) / (2 * h)
        assert np.allclose(deviation_matrix_deriv(th), fd, atol=1e-9)
    with pytest.raises(DomainError):
        deviation_matrix(2.0)


def _drift_oracle(V, v, kappa, nu):
    V, v = np.asarray(V, float), np.asarray(v, float)
    W = V - v

    def f(th):
        A = deviation_matrix(th).matrix
        return (math.exp(np.linalg.norm(V + A @ W) ** kappa) - math.exp(np.linalg.norm(V) ** kappa)) * abs(th) ** (-1 - nu)

    lo = integrate.quad(f, -HALF_PI, 0, limit=400, epsabs=1e-11, epsrel=1e-11)[0]
    hi = integrate.quad(f, 0, HALF_PI, limit=400, epsabs=1e-11, epsrel=1e-11)[0]
    return lo + hi


def test_drift_against_bruteforce():
    for V, v in [([0.3, 0.1], [2.0, -1.0]), ([1.5, -0.5], [0.2, 0.7]), ([-2.0, 1.0], [0.0, 0.0])]:
        assert drift_integral(V, v, 0.5, KP) == pytest.approx(_drift_oracle(V, v, 0.5, 0.25), rel=1e-7, abs=1e-9)


def test_drift_zero_relative_velocity():
    assert drift_integral([3.0, -1.0], [3.0, -1.0], 0.6, KP) == 0.0


def test_drift_negative_large_V():
    assert drift_integral([50.0, 0.0], [0.0, 0.0], 0.5, KP) < 0
    rng = np.random.default_rng(4)
    for _ in range(10):
        R = rng.uniform(20, 80)
        ang = rng.uniform(0, 2 * math.pi)
        V = R * np.array([math.cos(ang), math.sin(ang)])
        v = rng.normal(size=2)
        v *= rng.uniform(0, R / 130) / np.linalg.norm(v)
        assert drift_integral(V, v, 0.5, KP) < 0


def test_drift_growth_bound():
    rng = np.random.default_rng(5)
    kappa = 0.5
    ratios = []
    for _ in range(40):
        V = rng.normal(size=2) * 3
        v = rng.normal(size=2) * 3
        d = drift_integral(V, v, kappa, KP)
        ratios.append(abs(d) / (math.exp(np.linalg.norm(v) ** kappa) * math.exp(np.linalg.norm(V) ** kappa)))
    # the fitted constant is finite and of order one
    assert max(ratios) < 10


def test_drift_kappa_range():
    with pytest.raises(DomainError):
        drift_integral([1.0, 0.0], [0.0, 0.0], 0.2, KP)
