import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transpoint.errors import ConfigError, CutLocusError
from transpoint.geometry import Ellipsoid, FlatTorus, RoundSphere, make_manifold

S2 = RoundSphere(2, 1.0)
S2_RK4 = RoundSphere(2, 1.0, closed_form=False)
T2 = FlatTorus(2, [2 * math.pi, 2 * math.pi])
ELL = Ellipsoid([1.0, 1.2, 0.8])

unit3 = st.tuples(*[st.floats(-1, 1)] * 3).map(np.array).filter(lambda a: np.linalg.norm(a) > 0.2)


def _tangent(m, x, raw):
    w = m.to_tangent(x, raw)
    return w / np.linalg.norm(w)


def test_great_circle_returns_after_two_pi():
    x = np.array([1.0, 0, 0])
    v = np.array([0, 1.0, 0])
    y, w = S2.flow(x, v, 2 * math.pi)
    assert np.allclose(y, x, atol=1e-14) and np.allclose(w, v, atol=1e-14)
    y, _ = S2.flow(x, v, math.pi / 2)
    assert np.allclose(y, [0, 1, 0], atol=1e-15)


def test_rk4_matches_closed_form_sphere():
    rng = np.random.default_rng(3)
    x = S2.sample_points(5, 1)
    for xi in x:
        v = _tangent(S2, xi, rng.normal(size=3))
        a = S2.flow(xi, 2.5 * v)
        b = S2_RK4.flow(xi, 2.5 * v, steps=400)
        assert np.allclose(a[0], b[0], atol=1e-9)
        assert np.allclose(a[1], b[1], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(unit3, unit3, st.floats(0.05, 3.0))
def test_sphere_exp_log_roundtrip(xr, vr, length):
    x = xr / np.linalg.norm(xr)
    if np.linalg.norm(S2.to_tangent(x, vr)) < 1e-3:
        return
    w = length * _tangent(S2, x, vr)
    y = S2.exp_map(x, w)
    assert abs(np.linalg.norm(y) - 1) < 1e-12
    assert np.allclose(S2.log_map(x, y), w, atol=1e-8)
    assert S2.dist(x, y) == pytest.approx(length, abs=1e-9)


def test_log_at_antipode_raises():
    x = np.array([0, 0, 1.0])
    with pytest.raises(CutLocusError):
        S2.log_map(x, -x)
    assert S2.dist(x, -x) == math.inf


@settings(max_examples=40, deadline=None)
@given(unit3, unit3, unit3, st.floats(0.1, 3.0))
def test_transport_is_isometry(xr, vr, ur, length):
    x = xr / np.linalg.norm(xr)
    if np.linalg.norm(S2.to_tangent(x, vr)) < 1e-3:
        return
    w = length * _tangent(S2, x, vr)
    u = S2.to_tangent(x, ur)
    y, wy = S2.flow(x, w)
    tu = S2.transport(x, w, u)
    assert abs(np.dot(tu, y)) < 1e-12
    assert np.linalg.norm(tu) == pytest.approx(np.linalg.norm(u), abs=1e-12)
    # the angle with the velocity is preserved
    assert np.dot(tu, wy) == pytest.approx(np.dot(u, w), abs=1e-12)


def test_jacobi_conjugate_point_at_pi():
    x = np.array([1.0, 0, 0])
    v = np.array([0, 1.0, 0])
    J0 = np.zeros(3)
    K0 = np.array([0, 0, 1.0])
    for L in (0.5, 2.0, math.pi):
        J, _ = S2.jacobi(x, L * v, J0, L * K0)
        assert np.linalg.norm(J) == pytest.approx(abs(math.sin(L)), abs=1e-12)
    J, K = S2_RK4.jacobi(x, math.pi * v, J0, math.pi * K0, steps=400)
    assert np.linalg.norm(J) < 1e-6


def test_curvature_term_sign_unit_sphere():
    # R(gdot, J) gdot = -K (|gdot|^2 J - <gdot,J> gdot) with K = 1: the Jacobi equation J'' + J = 0
    x = np.array([0, 0, 1.0])
    g = np.array([1.0, 0, 0])
    J = np.array([0, 2.0, 0])
    assert np.allclose(S2.curvature_term(x, g, J), -J)
    assert np.allclose(S2_RK4.curvature_term(x, g, J), -J, atol=1e-12)
    assert np.allclose(T2.curvature_term(np.zeros(2), np.ones(2), np.array([1.0, -1])), 0)


def test_torus_wraps_and_logs_shortest():
    x = np.array([0.1, 6.2])
    y = T2.exp_map(x, np.array([-0.3, 0.2]))
    assert np.all((y >= 0) & (y < 2 * math.pi))
    assert np.allclose(T2.log_map(x, y), [-0.3, 0.2])
    assert T2.dist(np.zeros(2), np.array([math.pi - 0.1, 0])) == pytest.approx(math.pi - 0.1)


def test_ellipsoid_geodesic_stays_on_surface():
    x = ELL.sample_points(1, 4)[0]
    v = _tangent(ELL, x, np.array([0.3, -0.5, 0.7]))
    arc = ELL.geodesic(x, 3.0 * v)
    lvl = np.sum((arc.points / ELL.semi_axes) ** 2, axis=1)
    assert np.max(np.abs(lvl - 1)) < 1e-9
    speed = np.linalg.norm(arc.velocities, axis=1)
    assert np.max(np.abs(speed - 3.0)) < 1e-6
    assert ELL.zoll_length is None


def test_frames_orthonormal_and_tangent():
    for m in (S2, ELL, T2, RoundSphere(3, 2.0)):
        for x in m.sample_points(4, 2):
            E = m.frame(x)
            assert np.allclose(E.T @ E, np.eye(m.dim), atol=1e-12)
            assert np.allclose(m.to_tangent(x, E.T), E.T, atol=1e-12)


def test_sampling_is_deterministic():
    assert np.array_equal(S2.sample_points(50, 0), S2.sample_points(50, 0))
    assert not np.array_equal(S2.sample_points(50, 0), S2.sample_points(50, 1))
    d = S2.unit_directions(np.array([0, 0, 1.0]), 8)
    assert np.allclose(np.linalg.norm(d, axis=1), 1)


def test_make_manifold_roundtrip_and_errors():
    for m in (S2, T2, ELL):
        assert make_manifold(m.config).config == m.config
    with pytest.raises((ConfigError, ValueError)):
        make_manifold({"kind": "klein-bottle"})
    with pytest.raises(ValueError):
        RoundSphere(1)
