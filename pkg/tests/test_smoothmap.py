import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transpoint.errors import ConfigError, NotADiffeomorphismError
from transpoint.geometry import FlatTorus, RoundSphere, TangentVector
from transpoint.smoothmap import (
    Composite,
    FiniteDifferenceMap,
    FlowMap,
    IdentityMap,
    SphereRotation,
    TorusTranslation,
    make_field,
    make_homotopy,
    make_map,
    rotation_matrix,
)

S2 = RoundSphere(2, 1.0)
T2 = FlatTorus(2, [2 * math.pi, 2 * math.pi])
ROT = SphereRotation(S2, math.pi / 3)
SHEAR = TorusTranslation(T2, [0.3, -0.2], shear=0.4)
FLOW = FlowMap(S2, make_field(S2, {}), 0.05)


def _fd_jacobian(fmap, x, u, h=1e-6):
    m = fmap.manifold
    a = fmap.eval(m.exp_map(x, h * u))
    b = fmap.eval(m.exp_map(x, -h * u))
    return m.difference(b, a) / (2 * h)


def test_rotation_matrix_is_orthogonal():
    R = rotation_matrix(3, 0.7)
    assert np.allclose(R @ R.T, np.eye(3))
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert np.allclose(R @ [0, 0, 1], [0, 0, 1])


def test_rotation_moves_equator_by_angle():
    x = np.array([1.0, 0, 0])
    y = ROT.eval(x)
    assert S2.dist(x, y) == pytest.approx(math.pi / 3, abs=1e-14)
    assert np.allclose(ROT.eval(np.array([0, 0, 1.0])), [0, 0, 1])


@pytest.mark.parametrize("fmap", [ROT, SHEAR, FLOW], ids=["rotation", "shear", "flow"])
def test_jacobian_matches_finite_differences(fmap):
    m = fmap.manifold
    for x in m.sample_points(6, 5):
        E = m.frame(x)
        D = fmap.jacobian(x)
        for k in range(m.dim):
            u = E[:, k]
            fd = _fd_jacobian(fmap, x, u)
            assert np.allclose(m.to_tangent(fmap.eval(x), D @ u), fd, atol=1e-7)


def test_second_differential_matches_fd_of_jacobian():
    for x in T2.sample_points(4, 1):
        u, v = np.array([0.3, 0.8]), np.array([-0.5, 1.0])
        h = 1e-5
        fd = (SHEAR.jacobian(x + h * u) - SHEAR.jacobian(x - h * u)) @ v / (2 * h)
        assert np.allclose(SHEAR.second_differential(x, u, v), fd, atol=1e-8)


def test_isometries_have_vanishing_second_tensor():
    x = S2.sample_points(1, 0)[0]
    assert np.allclose(ROT.second_tensor(x), 0)
    assert np.allclose(IdentityMap(S2).second_tensor(x), 0)


def test_fd_wrapper_agrees_with_analytic_map():
    fd = FiniteDifferenceMap.wrap(SHEAR)
    assert not fd.analytic
    for x in T2.sample_points(5, 2):
        assert np.allclose(fd.jacobian(x), SHEAR.jacobian(x), atol=1e-8)
        assert np.allclose(fd.second_tensor(x), SHEAR.second_tensor(x), atol=1e-5)
        y, D = fd.eval_jacobian(x)
        assert np.allclose(y, SHEAR.eval(x)) and np.allclose(D, fd.jacobian(x))


def test_nabla_inverse_adjoint_matches_fd():
    x = np.array([0.4, 1.1])
    u = np.array([0.2, -0.7])
    h = 1e-6
    inv = lambda p: np.linalg.inv(SHEAR.jacobian(p)).T  # noqa: E731
    fd = (inv(x + h * u) - inv(x - h * u)) / (2 * h)
    got = SHEAR.nabla_inverse_adjoint(x, u).matrix
    assert np.allclose(got, fd, atol=1e-8)


def test_contact_lift_of_isometry_is_pushforward():
    x = np.array([1.0, 0, 0])
    v = np.array([0, 0.6, 0.8])
    out = ROT.contact_lift(TangentVector(x, v))
    assert np.allclose(out.base, ROT.eval(x))
    assert np.allclose(out.vec, ROT.jacobian(x) @ v)
    p = np.array([0.5, 0.5])
    sym = SHEAR.symplectic_lift(TangentVector(p, np.array([1.0, 0])))
    assert np.allclose(SHEAR.jacobian(p).T @ sym.vec, [1.0, 0])
    lifted = SHEAR.contact_lift(TangentVector(p, np.array([1.0, 0])))
    assert np.linalg.norm(lifted.vec) == pytest.approx(1.0)


def test_degenerate_map_rejected():
    class Squash(IdentityMap):
        def jacobian(self, x):
            return np.diag([1.0, 1e-12])

    with pytest.raises(NotADiffeomorphismError):
        Squash(T2).inverse_adjoint_map(np.zeros(2))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.1))
def test_flow_map_is_close_to_identity(eps):
    fmap = FlowMap(S2, make_field(S2, {}), eps)
    X = S2.sample_points(30, 0)
    Y = fmap.eval(X)
    d = np.linalg.norm(Y - X, axis=1)
    assert np.all(d < 1.5 * eps)
    assert np.allclose(np.linalg.norm(Y, axis=1), 1, atol=1e-12)


def test_flow_map_inverts_with_negative_epsilon():
    fwd = FlowMap(S2, make_field(S2, {}), 0.05, steps=64)
    back = FlowMap(S2, make_field(S2, {}), -0.05, steps=64)
    X = S2.sample_points(20, 3)
    assert np.allclose(back.eval(fwd.eval(X)), X, atol=1e-9)


def test_composite_chain_rule():
    comp = Composite(ROT, FLOW)
    x = S2.sample_points(1, 7)[0]
    assert np.allclose(comp.eval(x), ROT.eval(FLOW.eval(x)))
    assert np.allclose(comp.jacobian(x), ROT.jacobian(FLOW.eval(x)) @ FLOW.jacobian(x), atol=1e-12)


def test_make_map_configs():
    for cfg in ({"kind": "identity"}, {"kind": "sphere-rotation", "angle": 0.5}, {"kind": "flow", "epsilon": 0.05}):
        fmap = make_map(S2, cfg)
        assert make_map(S2, fmap.config).config == fmap.config
    with pytest.raises(ConfigError):
        make_map(S2, {"kind": "torus-translation", "shift": [0.1, 0.1]})
    with pytest.raises((ConfigError, ValueError)):
        make_map(S2, {"kind": "nonsense"})


def test_homotopy_endpoints():
    hom = make_homotopy(S2, {"kind": "rotation", "angle": math.pi / 3})
    x = S2.sample_points(3, 0)
    assert np.allclose(hom.at(0.0).eval(x[0]), x[0])
    assert np.allclose(hom.at(1.0).eval(x[0]), ROT.eval(x[0]))
    tr = hom.track(x, 16)
    assert tr.shape == (3, 17, 3)
    assert np.allclose(tr[:, 0], x) and np.allclose(tr[:, -1], ROT.eval(x))
    rev = hom.reversed().track(x, 16)
    assert np.allclose(rev, tr[:, ::-1])


def test_flow_homotopy_track_matches_at():
    hom = make_homotopy(S2, {"kind": "flow", "epsilon": 0.05})
    x = S2.sample_points(2, 1)
    tr = hom.track(x, 8)
    assert np.allclose(tr[:, 4], hom.at(0.5).eval(x), atol=1e-10)
