import math

import numpy as np
import pytest

from transpoint.geometry import FlatTorus, RoundSphere
from transpoint.jacobi import (
    boundary_term,
    classify,
    dynamical_test,
    hessian_form,
    jacobi_propagate,
    kernel_test,
    morse_data,
    record_path,
)
from transpoint.pathspace import constrained_tangent, energy, perturb
from transpoint.records import ShootingState
from transpoint.smoothmap import FlowMap, IdentityMap, SphereRotation, TorusTranslation, make_field
from transpoint.solver import newton_solve

S2 = RoundSphere(2, 1.0)
T2 = FlatTorus(2, [2 * math.pi, 2 * math.pi])
ROT = SphereRotation(S2, math.pi / 3)
ID = IdentityMap(S2)
FLOW = FlowMap(S2, make_field(S2, {}), 0.05)
EQ = np.array([1.0, 0, 0])
EAST = np.array([0, 1.0, 0])


@pytest.fixture(scope="module")
def flow_record():
    # one of the isolated records of the (pi, 3pi] scan
    seed = ShootingState([0.9029, 0.0, -0.4298], [-0.4298, 0.0, -0.9029], 6.2264)
    return newton_solve(FLOW, seed)


def test_conjugate_point_at_pi():
    arc = S2.geodesic(EQ, EAST, duration=math.pi)
    J, _ = jacobi_propagate(S2, arc, np.zeros(3), np.array([0, 0, 1.0]))
    assert np.linalg.norm(J) < 1e-12
    arc = S2.geodesic(EQ, EAST, duration=math.pi / 2)
    J, Jd = jacobi_propagate(S2, arc, np.zeros(3), np.array([0, 0, 1.0]))
    assert np.allclose(J, [0, 0, 1.0]) and np.linalg.norm(Jd) < 1e-12


def test_kernel_dimensions_of_analytic_records():
    rot = newton_solve(ROT, ShootingState(EQ, EAST, math.pi / 3))
    assert kernel_test(ROT, rot).dim == 1
    ident = newton_solve(ID, ShootingState(EQ, EAST, 2 * math.pi))
    assert kernel_test(ID, ident).dim == 3
    shear = TorusTranslation(T2, [0.5, 0.0])
    flat = newton_solve(shear, ShootingState([1.0, 1.0], [1.0, 0.0], 0.5))
    # a translation fixes every chord: x can move freely and t cannot
    assert kernel_test(shear, flat).dim == 2


def test_flow_record_is_nondegenerate(flow_record):
    kt = kernel_test(FLOW, flow_record)
    dt = dynamical_test(FLOW, flow_record)
    assert kt.dim == 0 and not kt.borderline
    assert dt.nondegenerate
    assert dt.min_relative_sigma > 1e-4


def test_dynamical_test_agrees_on_degenerate_records():
    rot = newton_solve(ROT, ShootingState(EQ, EAST, math.pi / 3))
    res = dynamical_test(ROT, rot)
    assert not res.nondegenerate
    assert res.min_distance_to_one < 1e-6


def test_return_map_is_symplectic_for_isometry():
    from transpoint.jacobi import return_map

    rec = newton_solve(ROT, ShootingState(EQ, EAST, math.pi / 3))
    M = return_map(ROT, rec)
    assert abs(abs(np.linalg.det(M)) - 1) < 1e-10


def _fd_hessian(fmap, rec, free_u, free_v, count, eps=1e-3):
    p = record_path(fmap, rec, count)
    e0 = energy(p)

    def q(w):
        return (energy(perturb(p, w, eps)) + energy(perturb(p, w, -eps)) - 2 * e0) / (2 * eps ** 2)

    return 0.5 * (q(free_u + free_v) - q(free_u) - q(free_v))


@pytest.mark.parametrize("which", ["rotation", "flow"])
def test_hessian_form_matches_second_differences(which, flow_record):
    fmap, rec = (ROT, newton_solve(ROT, ShootingState(EQ, EAST, math.pi / 3))) if which == "rotation" \
        else (FLOW, flow_record)
    count = 128
    p = record_path(fmap, rec, count)
    rng = np.random.default_rng(2)
    s = np.linspace(0, 1, count)[:, None]
    for _ in range(3):
        a, b = rng.normal(size=(2, 2, 3))
        fu = S2.to_tangent(p.nodes[:-1], a[0] * np.cos(math.pi * s) + a[1] * s)
        fv = S2.to_tangent(p.nodes[:-1], b[0] + b[1] * np.sin(math.pi * s))
        U, V = constrained_tangent(p, fu), constrained_tangent(p, fv)
        got = hessian_form(fmap, rec, U, V)
        ref = _fd_hessian(fmap, rec, fu, fv, count)
        assert got == pytest.approx(ref, rel=1e-3, abs=1e-3 * abs(hessian_form(fmap, rec, U, U)))


def test_boundary_term_vanishes_on_isometries():
    rec = newton_solve(ROT, ShootingState(EQ, EAST, math.pi / 3))
    u, w = np.array([0, 0.3, 0.4]), np.array([0, -1.0, 0.2])
    assert abs(boundary_term(ROT, rec, u, w)) < 1e-10
    shear = TorusTranslation(T2, [0.5, 0.0], shear=0.4)
    r2 = newton_solve(shear, ShootingState([1.0, 1.0], [1.0, 0.3], 0.9))
    assert abs(boundary_term(shear, r2, np.array([0, 1.0]), np.array([0, 1.0]))) > 1e-3


def test_identity_morse_indices():
    for t, expected in ((2 * math.pi, 1), (4 * math.pi, 3)):
        rec = newton_solve(ID, ShootingState(EQ, EAST, t))
        md = morse_data(ID, rec, 48)
        assert md.index == expected
        assert md.kernel_dim == 3


def test_classify_fills_fields(flow_record):
    rec = classify(FLOW, flow_record, morse=True, count=32)
    assert rec.kernel_dim == 0 and rec.nondegenerate is True
    assert isinstance(rec.morse_index, int)
    assert "min_relative_sigma" in rec.extra
