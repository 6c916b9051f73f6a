"""Second-order theory at translated points.

* Jacobi fields along chords (``J'' = R(gamma', J) gamma'``).
* The Hessian bilinear form of the constrained energy and its quadrature.
* Two nondegeneracy tests: the Jacobi boundary system and the eigenvalue-1
  test for the linearised return map in the ``(J, J'/t)`` splitting.
* Morse index from the discrete Hessian of the broken-geodesic energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .geometry import GeodesicArc, Manifold
from .pathspace import DiscretePath, first_variation
from .records import TranslatedPointRecord
from .smoothmap import SmoothMap

KERNEL_RTOL = 1e-6
BORDERLINE_BAND = (1e-8, 1e-4)
HESSIAN_STEP = 1e-4
INDEX_RTOL = 1e-6
HESSIAN_KERNEL_RTOL = 1e-5


@dataclass
class JacobiFrame:
    arc: GeodesicArc
    J0: np.ndarray
    Jdot0: np.ndarray
    J1: np.ndarray | None = None
    Jdot1: np.ndarray | None = None


def jacobi_propagate(manifold: Manifold, arc: GeodesicArc, J0, Jdot0):
    """``(J, J')`` at the end of ``arc``; derivatives are taken in the arc parameter."""
    dur = arc.duration
    J0 = np.asarray(J0, float)
    Jdot0 = np.asarray(Jdot0, float)
    if dur == 0:
        return J0.copy(), Jdot0.copy()
    x, w = arc.initial.base, arc.initial.vec * dur
    J1, K1 = manifold.jacobi(x, w, J0, dur * Jdot0)
    return J1, K1 / dur


def propagate(frame: JacobiFrame, manifold: Manifold) -> JacobiFrame:
    frame.J1, frame.Jdot1 = jacobi_propagate(manifold, frame.arc, frame.J0, frame.Jdot0)
    return frame


def _chord(fmap: SmoothMap, rec: TranslatedPointRecord):
    m = fmap.manifold
    x, w = rec.state.x, rec.state.velocity
    g1, gd1 = m.flow(x, w, 1.0)
    return m, x, w, g1, gd1


def _propagator(m: Manifold, x, w, E):
    """Frame matrix of ``(J0, K0) -> (J1, K1)`` along the unit-time chord; returns raw ends too."""
    n = E.shape[1]
    J0 = np.concatenate([E.T, np.zeros((n, E.shape[0]))])
    K0 = np.concatenate([np.zeros((n, E.shape[0])), E.T])
    J1, K1 = m.jacobi(np.broadcast_to(x, J0.shape), np.broadcast_to(w, J0.shape), J0, K0)
    return J0, K0, J1, K1


# -- nondegeneracy -------------------------------------------------------------


@dataclass
class KernelResult:
    dim: int
    basis: np.ndarray
    singular_values: np.ndarray
    relative: np.ndarray
    borderline: bool
    matrix: np.ndarray = field(repr=False)

    @property
    def min_relative(self) -> float:
        return float(self.relative[-1])


def _kernel_from(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, s, vt = np.linalg.svd(matrix)
    rel = s / s[0] if s[0] > 0 else np.zeros_like(s)
    return s, rel, vt


def kernel_test(fmap: SmoothMap, rec: TranslatedPointRecord) -> KernelResult:
    """Solutions ``(J0, J'0)`` of the Jacobi boundary system at a positive-shift record.

    The system is ``J(1) = df J(0)`` and ``(d^2 f J(0))^T gamma'(1) = J'(0) - df^T J'(1)``,
    where ``(d^2 f J0)^T`` is the adjoint of ``u -> d^2 f[J0, u]``.
    """
    m, x, w, g1, gd1 = _chord(fmap, rec)
    n = m.dim
    ex = m.frame(x)
    fx = fmap.eval(x)
    ey = m.frame(fx)
    D = fmap.jacobian(x)
    tensor = fmap.second_tensor(x)
    J0, K0, J1, K1 = _propagator(m, x, w, ex)
    top = m.to_tangent(fx, J1) - J0 @ D.T
    gd1 = m.to_tangent(fx, gd1)
    coords = J0 @ ex  # frame coordinates of J0 at x
    second = np.einsum("ki,ijd,d->kj", coords, tensor, gd1) @ ex.T
    bottom = second - K0 + m.to_tangent(x, K1 @ D)
    A = np.concatenate([top @ ey, bottom @ ex], axis=1).T
    s, rel, vt = _kernel_from(A)
    dim = int(np.sum(rel < KERNEL_RTOL))
    if dim > 2 * n - 1:
        raise AssertionError(f"kernel dimension {dim} exceeds 2n-1")
    lo, hi = BORDERLINE_BAND
    border = bool(np.any((rel >= lo) & (rel <= hi)))
    basis = vt[2 * n - dim:] if dim else np.zeros((0, 2 * n))
    return KernelResult(dim, basis, s, rel, border, A)


@dataclass
class DynamicalResult:
    nondegenerate: bool
    min_distance_to_one: float
    min_relative_sigma: float
    eigenvalues: np.ndarray
    matrix: np.ndarray = field(repr=False)


def return_map(fmap: SmoothMap, rec: TranslatedPointRecord) -> np.ndarray:
    """Linearisation at ``G_t(x, v)`` of the lift composed with the backward flow.

    Coordinates are ``(J, J'/t)`` in the orthonormal frame at ``f(x) = gamma(1)``.
    """
    m, x, w, g1, gd1 = _chord(fmap, rec)
    t = rec.state.t
    v = rec.state.v
    n = m.dim
    ex = m.frame(x)
    fx = fmap.eval(x)
    ey = m.frame(fx)
    J0, K0, J1, K1 = _propagator(m, x, w, ex)
    # forward Jacobi map (J0, K0/t) at x -> (J1, K1/t) at gamma(1)
    fwd = np.concatenate([m.to_tangent(fx, J1) @ ey, m.to_tangent(fx, K1) @ ey / t], axis=1).T
    fwd = fwd @ np.diag(np.concatenate([np.ones(n), np.full(n, t)]))
    back = np.linalg.inv(fwd)
    dmap = fmap.differential_map(x)
    inv_t = fmap.inverse_adjoint_map(x)
    tensor = fmap.second_tensor(x)
    lift = np.zeros((2 * n, 2 * n))
    lift[:n, :n] = dmap.matrix
    lift[n:, n:] = inv_t.matrix
    for i in range(n):
        nab = fmap.nabla_inverse_adjoint(x, ex[:, i], tensor)
        lift[n:, i] = ey.T @ nab(v)
    return lift @ back


def dynamical_test(fmap: SmoothMap, rec: TranslatedPointRecord) -> DynamicalResult:
    """Eigenvalue-1 test for the return map.

    The verdict uses the smallest singular value of ``M - I`` relative to the
    largest one: ``|lambda - 1|`` is ill-conditioned when ``M`` has Jordan blocks.
    """
    M = return_map(fmap, rec)
    eig = np.linalg.eigvals(M)
    s = np.linalg.svd(M - np.eye(len(M)), compute_uv=False)
    rel = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    return DynamicalResult(rel >= KERNEL_RTOL, float(np.min(np.abs(eig - 1))), rel, eig, M)


# -- second variation ----------------------------------------------------------


def record_path(fmap: SmoothMap, rec: TranslatedPointRecord, count: int = 64) -> DiscretePath:
    return DiscretePath.from_geodesic(fmap.manifold, rec.state, fmap, count)


def hessian_form(fmap: SmoothMap, rec: TranslatedPointRecord, U, V) -> float:
    """Half the second variation of the constrained energy at ``rec`` on ``U, V``.

    ``U`` and ``V`` are node vectors ``(N + 1, d)`` on the uniform sampling of the
    chord, with last entry ``df U_0``.  The integrand
    ``<R(V, g') U, g'> + <U', V'>`` is evaluated with transported differences at
    segment midpoints; the boundary term is ``<d^2 f[U_0, V_0], g'(1)>``.
    """
    U = np.asarray(U, float)
    V = np.asarray(V, float)
    N = len(U) - 1
    m = fmap.manifold
    path = record_path(fmap, rec, N)
    nodes = path.nodes
    s = np.linspace(0.0, 1.0, N + 1)[:, None]
    w = rec.state.velocity
    _, vel = m.flow(np.broadcast_to(rec.state.x, nodes.shape), np.broadcast_to(w, nodes.shape), s)
    back = m.log_map(nodes[1:], nodes[:-1])
    Ut = m.transport(nodes[1:], back, U[1:])
    Vt = m.transport(nodes[1:], back, V[1:])
    dU = N * (Ut - U[:-1])
    dV = N * (Vt - V[:-1])
    kinetic = float(np.sum(dU * dV)) / N
    curv = np.einsum("ij,ij->i", m.curvature_term(nodes, vel, U), V)
    weights = np.full(N + 1, 1.0 / N)
    weights[[0, -1]] = 0.5 / N
    curvature = float(np.sum(weights * curv))
    gd1 = vel[-1]
    boundary = float(np.dot(fmap.second_differential(rec.state.x, U[0], V[0]), gd1))
    return curvature + kinetic + boundary


def boundary_term(fmap: SmoothMap, rec: TranslatedPointRecord, u, w) -> float:
    _, gd1 = fmap.manifold.flow(rec.state.x, rec.state.velocity, 1.0)
    return float(np.dot(fmap.second_differential(rec.state.x, u, w), gd1))


def _node_frames(m: Manifold, nodes):
    return np.array([m.frame(x) for x in nodes])


def discrete_hessian(fmap: SmoothMap, path: DiscretePath, step: float = HESSIAN_STEP):
    """Central-difference Hessian of the energy in node frames of the free nodes.

    Returns ``(H, frames)`` with ``H`` of size ``nN`` (symmetrised).
    """
    m = path.manifold
    free = path.nodes[:-1]
    N, n = len(free), m.dim
    frames = _node_frames(m, free)
    size = N * n
    H = np.empty((size, size))
    for k in range(size):
        i, a = divmod(k, n)
        cols = []
        for sgn in (1.0, -1.0):
            moved = free.copy()
            moved[i] = m.exp_map(free[i], sgn * step * frames[i][:, a])
            p = DiscretePath.from_free_nodes(m, moved, path.fmap, path.params)
            g = first_variation(p)
            cols.append(np.einsum("ida,id->ia", frames, g).reshape(-1))
        H[:, k] = (cols[0] - cols[1]) / (2 * step)
    return 0.5 * (H + H.T), frames


def h1_gram(fmap: SmoothMap, path: DiscretePath, frames) -> np.ndarray:
    """Discrete ``H^1`` inner product on free-node frame coordinates (``U_N = df U_0``)."""
    m = path.manifold
    free = path.nodes[:-1]
    N, n, d = len(free), m.dim, m.ambient_dim
    B = np.zeros(((N + 1) * d, N * n))
    for i in range(N):
        B[i * d:(i + 1) * d, i * n:(i + 1) * n] = frames[i]
    B[N * d:, :n] = fmap.jacobian(free[0]) @ frames[0]
    nodes_op = B.reshape(N + 1, d, N * n)
    diff = (nodes_op[1:] - nodes_op[:-1]).reshape(-1, N * n)
    mass = nodes_op[:-1].reshape(-1, N * n)
    return mass.T @ mass / N + N * diff.T @ diff


@dataclass
class MorseResult:
    index: int
    kernel_dim: int
    eigenvalues: np.ndarray


def morse_data(fmap: SmoothMap, rec: TranslatedPointRecord, count: int = 64) -> MorseResult:
    """Index and nullity of the discrete Hessian, relative to the ``H^1`` Gram matrix."""
    path = record_path(fmap, rec, count)
    H, frames = discrete_hessian(fmap, path)
    G = h1_gram(fmap, path, frames)
    lam = scipy.linalg.eigh(H, G, eigvals_only=True)
    scale = float(np.max(np.abs(lam)))
    index = int(np.sum(lam < -INDEX_RTOL * scale))
    kern = int(np.sum(np.abs(lam) < HESSIAN_KERNEL_RTOL * scale))
    return MorseResult(index, kern, lam)


def morse_index(fmap: SmoothMap, rec: TranslatedPointRecord, count: int = 64) -> int:
    return morse_data(fmap, rec, count).index


def classify(fmap: SmoothMap, rec: TranslatedPointRecord, morse: bool = False, count: int = 64):
    """Fill ``kernel_dim``, ``nondegenerate``, ``borderline`` (and optionally the index)."""
    kt = kernel_test(fmap, rec)
    rec.kernel_dim = kt.dim
    rec.nondegenerate = kt.dim == 0
    rec.borderline = kt.borderline
    rec.extra["min_relative_sigma"] = kt.min_relative
    if morse:
        rec.morse_index = morse_index(fmap, rec, count)
    return rec

