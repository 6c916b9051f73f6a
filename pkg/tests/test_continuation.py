import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transpoint.continuation import (
    continue_branch,
    continue_solutions,
    delta,
    geodesic_path,
    round_trip,
    shift_bound_slack,
    tau_transport,
    track,
    track_shifts,
)
from transpoint.geometry import FlatTorus, RoundSphere
from transpoint.jacobi import morse_index
from transpoint.pathspace import DiscretePath, lift_point, shift
from transpoint.records import ShootingState
from transpoint.smoothmap import IdentityMap, make_homotopy
from transpoint.solver import newton_solve, sm_distance

S2 = RoundSphere(2, 1.0)
T2 = FlatTorus(2, [2 * math.pi, 2 * math.pi])
THETA = math.pi / 3
ROT_H = make_homotopy(S2, {"kind": "rotation", "angle": THETA})
EQ = np.array([1.0, 0, 0])
EAST = np.array([0, 1.0, 0])


def test_track_energy_of_rotation_is_latitude_arc():
    # the track of x is an arc of its latitude circle; sqrt(E) equals its length
    # up to the chord-vs-arc discretisation, and the equator attains theta
    x = np.array([[1.0, 0, 0], [math.sqrt(0.5), 0, math.sqrt(0.5)]])
    vals = track_shifts(ROT_H, x, 256)
    assert vals[0] == pytest.approx(THETA, abs=1e-12)
    assert vals[1] < THETA
    assert track(ROT_H, EQ).energy == pytest.approx(THETA ** 2, rel=1e-12)


def test_delta_of_rotation_homotopy_equals_angle():
    est = delta(ROT_H)
    assert est.value == pytest.approx(THETA, abs=1e-3)
    assert est.warning is None
    assert est.grid_value <= est.value + 1e-12


def test_delta_of_constant_homotopy_is_zero():
    est = delta(make_homotopy(S2, {"kind": "constant"}))
    assert est.value < 1e-12


def test_delta_rejects_coarse_grid():
    with pytest.raises(ValueError):
        delta(ROT_H, density=5)


def test_translation_delta_is_shift_length():
    hom = make_homotopy(T2, {"kind": "translation", "shift": [0.3, 0.4]})
    assert delta(hom).value == pytest.approx(0.5, abs=1e-9)


def test_tau_transport_of_equator_great_circle():
    alpha = geodesic_path(ROT_H, ShootingState(EQ, EAST, 2 * math.pi), 64)
    out = tau_transport(ROT_H, alpha)
    assert out.constraint_defect() < 1e-12
    assert shift(out) == pytest.approx(2 * math.pi + THETA, abs=1e-9)
    fwd, back = round_trip(ROT_H, alpha)
    assert shift(back) == pytest.approx(2 * math.pi + 2 * THETA, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 6.0))
def test_tau_bound_holds_on_random_geodesics(seed, length):
    rng = np.random.default_rng(seed)
    x = S2.sample_points(1, int(rng.integers(500)))[0]
    v = S2.to_tangent(x, rng.normal(size=3))
    v = v / np.linalg.norm(v)
    alpha = DiscretePath.from_geodesic(S2, ShootingState(x, v, length), IdentityMap(S2), 32)
    assert shift_bound_slack(ROT_H, alpha, THETA) >= -1e-6


def test_continuation_follows_analytic_branches():
    ident = newton_solve(IdentityMap(S2), ShootingState(EQ, EAST, 2 * math.pi))
    east = continue_branch(ROT_H, ident, steps=10)
    assert east.end is not None and east.lost_at is None
    assert east.end.state.t == pytest.approx(2 * math.pi + THETA, abs=1e-8)
    west_rec = newton_solve(IdentityMap(S2), ShootingState(EQ, -EAST, 2 * math.pi))
    west = continue_branch(ROT_H, west_rec, steps=10)
    assert west.end.state.t == pytest.approx(2 * math.pi - THETA, abs=1e-8)
    ts = [t for _, t in east.trace]
    assert all(b >= a for a, b in zip(ts, ts[1:]))


def test_merged_branches_are_flagged():
    ident = newton_solve(IdentityMap(S2), ShootingState(EQ, EAST, 2 * math.pi))
    branches = continue_solutions(ROT_H, [ident, ident], steps=5)
    assert "merged-with:1" in branches[0].flags
    d = branches[0].to_dict()
    assert d["end"]["state"]["t"] == pytest.approx(2 * math.pi + THETA)


def test_constant_homotopy_leaves_records_alone():
    rec = newton_solve(IdentityMap(S2), ShootingState(EQ, EAST, 2 * math.pi))
    br = continue_branch(make_homotopy(S2, {"kind": "constant"}), rec, steps=4)
    assert br.end.state.t == pytest.approx(rec.state.t, abs=1e-12)
    assert np.allclose(br.end.state.x, rec.state.x)
    assert continue_branch(ROT_H, rec, steps=6).trace == continue_branch(ROT_H, rec, steps=6).trace


def test_round_trip_reconverges_to_nondegenerate_record():
    hom = make_homotopy(S2, {"kind": "flow", "epsilon": 0.05}).reversed()
    flow = hom.at(0.0)
    rec = newton_solve(flow, ShootingState([0.9029, 0, -0.4298], [-0.4298, 0, -0.9029], 6.2264))
    alpha = geodesic_path(hom, rec.state)
    _, back = round_trip(hom, alpha)
    assert shift(back) <= shift(alpha) + 2 * delta(hom).value + 1e-6
    lifted = lift_point(S2, back)
    again = newton_solve(flow, ShootingState(lifted.base, lifted.vec, shift(back)))
    assert again.state.t == pytest.approx(rec.state.t, abs=1e-8)
    assert float(sm_distance(S2, again.state.x, again.state.v, rec.state.x, rec.state.v)) < 1e-6


def test_minimizing_branch_moves_by_at_most_delta():
    # flat torus: every translated point minimizes, so the branch value is pinned
    hom = make_homotopy(T2, {"kind": "translation", "shift": [0.3, 0.4]})
    rec = newton_solve(IdentityMap(T2), ShootingState([1.0, 2.0], [1.0, 0.0], 2 * math.pi))
    br = continue_branch(hom, rec, steps=20)
    assert morse_index(hom.at(1.0), br.end) == 0
    assert br.end.state.t == pytest.approx(math.hypot(2 * math.pi + 0.3, 0.4), abs=1e-8)
    # the partial homotopy up to s translates by s * (0.3, 0.4), so its delta is s * 0.5
    assert delta(hom).value == pytest.approx(0.5, abs=1e-9)
    assert all(abs(t - rec.state.t) <= 0.5 * s + 1e-4 for s, t in br.trace)
