"""Broken-geodesic model of the path space ``{gamma : gamma(1) = f(gamma(0))}``.

A path is a node sequence ``x_0 .. x_N`` at parameters ``0 = s_0 < .. < s_N = 1``
joined by minimal geodesics.  Its energy is ``sum |log_{x_i} x_{i+1}|^2 / (s_{i+1} - s_i)``,
which for uniform parameters is ``N * sum |log|^2``.  The last node is not free:
it is stored as ``f(x_0)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Manifold, TangentVector, make_manifold
from .records import ShootingState
from .smoothmap import Composite, IdentityMap, SmoothMap, make_map

CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class DiscretePath:
    """Nodes on ``M``; ``fmap`` is the constraint map, ``None`` for an open path."""

    manifold: Manifold
    nodes: np.ndarray
    fmap: SmoothMap | None
    params: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if self.params is None:
            object.__setattr__(self, "params", np.linspace(0.0, 1.0, len(nodes)))
        else:
            object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        if len(self.params) != len(nodes) or len(nodes) < 2:
            raise ValueError("a path needs at least two nodes and one parameter per node")

    @classmethod
    def from_free_nodes(cls, manifold, free_nodes, fmap, params=None) -> "DiscretePath":
        free_nodes = np.asarray(free_nodes, float)
        end = fmap.eval(free_nodes[0])
        return cls(manifold, np.concatenate([free_nodes, end[None]]), fmap, params)

    @classmethod
    def from_geodesic(cls, manifold, state: ShootingState, fmap, count: int = 64) -> "DiscretePath":
        s = np.linspace(0.0, 1.0, count + 1)[:, None]
        pts, _ = manifold.flow(np.broadcast_to(state.x, (count + 1, state.x.size)),
                               np.broadcast_to(state.velocity, (count + 1, state.x.size)), s)
        if fmap is None:
            return cls(manifold, pts, None)
        return cls.from_free_nodes(manifold, pts[:-1], fmap)

    @classmethod
    def constant(cls, manifold, point, fmap=None, count: int = 1) -> "DiscretePath":
        return cls(manifold, np.repeat(np.asarray(point, float)[None], count + 1, axis=0), fmap)

    @property
    def count(self) -> int:
        return len(self.nodes) - 1

    @property
    def start(self):
        return self.nodes[0]

    @property
    def end(self):
        return self.nodes[-1]

    def constraint_defect(self) -> float:
        if self.fmap is None:
            return 0.0
        return float(np.linalg.norm(self.manifold.difference(self.fmap.eval(self.nodes[0]), self.nodes[-1])))

    def segments(self) -> np.ndarray:
        """``log_{x_i} x_{i+1}`` for every segment."""
        return self.manifold.log_map(self.nodes[:-1], self.nodes[1:])

    def durations(self) -> np.ndarray:
        return np.diff(self.params)

    def trace(self, s) -> np.ndarray:
        """Points of the broken geodesic at parameters ``s``."""
        s = np.atleast_1d(np.asarray(s, float))
        idx = np.clip(np.searchsorted(self.params, s, side="right") - 1, 0, self.count - 1)
        dur = self.durations()[idx]
        frac = np.where(dur > 0, (s - self.params[idx]) / np.where(dur > 0, dur, 1.0), 0.0)
        w = self.segments()[idx]
        return self.manifold.exp_map(self.nodes[idx], frac[:, None] * w)

    def to_dict(self) -> dict:
        out = {"nodes": self.nodes.tolist(), "params": self.params.tolist(), "manifold": self.manifold.config}
        out["map"] = None if self.fmap is None else self.fmap.config
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "DiscretePath":
        m = make_manifold(data["manifold"])
        fmap = None if data.get("map") is None else make_map(m, data["map"])
        return cls(m, data["nodes"], fmap, data.get("params"))

    @classmethod
    def from_json(cls, text: str) -> "DiscretePath":
        return cls.from_dict(json.loads(text))


def energy(path: DiscretePath) -> float:
    seg = path.segments()
    dur = path.durations()
    sq = np.einsum("ij,ij->i", seg, seg)
    live = dur > 0
    if np.any(sq[~live] > 0):
        raise ValueError("zero-duration segment with positive length")
    return float(np.sum(sq[live] / dur[live]))


def shift(path: DiscretePath) -> float:
    return math.sqrt(energy(path))


def first_variation(path: DiscretePath) -> np.ndarray:
    """Gradient of the energy with respect to the free nodes ``x_0 .. x_{N-1}``.

    The constrained endpoint ``x_N = f(x_0)`` is pulled back to ``x_0`` through ``df^T``.
    """
    if path.fmap is None:
        raise ValueError("first variation needs a constrained path")
    m = path.manifold
    nodes, dur = path.nodes, path.durations()
    fwd = m.log_map(nodes[:-1], nodes[1:]) / dur[:, None]
    back = m.log_map(nodes[1:], nodes[:-1]) / dur[:, None]
    grad = -2.0 * fwd
    grad[1:] -= 2.0 * back[:-1]
    grad[0] += path.fmap.adjoint_differential(nodes[0], -2.0 * back[-1])
    return grad


def perturb(path: DiscretePath, directions, eps: float) -> DiscretePath:
    """Free nodes moved to ``exp_{x_i}(eps U_i)``; the endpoint follows the constraint."""
    m = path.manifold
    moved = m.exp_map(path.nodes[:-1], eps * np.asarray(directions, float)[: path.count])
    return DiscretePath.from_free_nodes(m, moved, path.fmap, path.params)


def constrained_tangent(path: DiscretePath, free) -> np.ndarray:
    """Full ``U_0 .. U_N`` from free vectors, with ``U_N = df U_0``."""
    free = path.manifold.to_tangent(path.nodes[:-1], np.asarray(free, float))
    last = path.fmap.differential(path.nodes[0], free[0])
    return np.concatenate([free, last[None]])


def _join(alpha: DiscretePath, beta: DiscretePath, fmap) -> DiscretePath:
    m = alpha.manifold
    if np.linalg.norm(m.difference(alpha.end, beta.start)) > CONSTRAINT_TOL:
        raise ValueError("endpoint mismatch: beta must start where alpha ends")
    ea, eb = energy(alpha), energy(beta)
    if ea == 0.0 and eb == 0.0:
        return DiscretePath.constant(m, alpha.start, fmap)
    ra, rb = math.sqrt(ea), math.sqrt(eb)
    s = ra / (ra + rb)
    if s == 0.0:
        nodes = np.concatenate([alpha.start[None], beta.nodes[1:]])
        return DiscretePath(m, nodes, fmap, beta.params)
    if s == 1.0:
        nodes = np.concatenate([alpha.nodes[:-1], beta.end[None]])
        return DiscretePath(m, nodes, fmap, alpha.params)
    params = np.concatenate([s * alpha.params, s + (1.0 - s) * beta.params[1:]])
    params[-1] = 1.0
    nodes = np.concatenate([alpha.nodes, beta.nodes[1:]])
    nodes[len(alpha.nodes) - 1] = alpha.end
    return DiscretePath(m, nodes, fmap, params)


def split_parameter(alpha: DiscretePath, beta: DiscretePath) -> float:
    """Parameter at which ``alpha`` hands over to ``beta`` in their concatenation."""
    ra, rb = shift(alpha), shift(beta)
    return 0.5 if ra + rb == 0 else ra / (ra + rb)


def compose_maps(outer: SmoothMap | None, inner: SmoothMap | None):
    if outer is None or inner is None:
        return None
    if isinstance(outer, IdentityMap):
        return inner
    if isinstance(inner, IdentityMap):
        return outer
    return Composite(outer, inner)


def concatenate(alpha: DiscretePath, beta: DiscretePath, fmap: SmoothMap | None = None) -> DiscretePath:
    """Concatenation lying in the path space of ``beta.fmap o alpha.fmap``.

    ``fmap`` overrides the constraint map of the result (used when the composite
    is known in closed form, e.g. ``f_1`` after transporting along a homotopy).
    """
    target = fmap if fmap is not None else compose_maps(beta.fmap, alpha.fmap)
    out = _join(alpha, beta, target)
    if target is not None and out.constraint_defect() > 1e-8:
        raise ValueError("concatenation violates the endpoint constraint")
    return out


def reverse_reduction(state: ShootingState) -> ShootingState:
    """Negative-shift problem at ``(x, v, t)`` as the positive problem at ``(x, -v, |t|)``.

    With ``t < 0`` the chord runs from ``f(x)`` to ``x`` and ends with velocity
    ``|t| v``; reading it backwards gives a chord from ``x`` to ``f(x)`` that
    starts with velocity ``-|t| v`` and satisfies the positive-shift conditions.
    """
    if state.t > 0:
        raise ValueError("reverse reduction applies to negative shifts")
    if state.t == 0:
        raise ValueError("zero shift is a fixed-point problem")
    return ShootingState(state.x, -state.v, -state.t)


def restore_negative(state: ShootingState) -> ShootingState:
    """Inverse of :func:`reverse_reduction`."""
    return ShootingState(state.x, -state.v, -state.t)


def lift_point(manifold: Manifold, path: DiscretePath) -> TangentVector:
    """``(x_0, unit initial direction)`` of a path; used to extract shooting data."""
    w = path.segments()[0] / path.durations()[0]
    return TangentVector(path.start, w / np.linalg.norm(w))
