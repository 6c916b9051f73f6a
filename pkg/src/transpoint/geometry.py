"""Riemannian manifold models: round spheres, ellipsoids and flat tori.

Spheres and ellipsoids are handled as hypersurfaces of Euclidean space:
points and tangent vectors live in ambient coordinates and the covariant
derivative is the tangential projection of the ambient derivative.  The
flat torus uses periodic chart coordinates.

Every array-level routine accepts stacked inputs of shape ``(..., d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CutLocusError, IntegratorError


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    vec: np.ndarray


@dataclass(frozen=True)
class GeodesicArc:
    """Geodesic ``s -> gamma(s)`` on ``[0, duration]`` with ``gamma'(0) = initial.vec``."""

    initial: TangentVector
    duration: float
    points: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return self.duration * float(np.linalg.norm(self.initial.vec))

    @property
    def samples(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.points, self.velocities))

    @property
    def end(self) -> TangentVector:
        return TangentVector(self.points[-1], self.velocities[-1])


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _rk4(rhs, state, h, steps, fix=None):
    for _ in range(steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if fix is not None:
            state = fix(state)
    if not np.all(np.isfinite(state)):
        raise IntegratorError("geodesic integrator produced non-finite values")
    return state


class Manifold:
    """Common interface.  Subclasses fill in the geometry."""

    name: str
    dim: int
    ambient_dim: int
    injectivity_radius: float
    zoll_length: float | None = None

    # -- configuration ---------------------------------------------------
    @property
    def config(self) -> dict:
        raise NotImplementedError

    # -- linear structure ------------------------------------------------
    def inner(self, x, u, w):
        return _dot(u, w)

    def norm(self, x, u):
        return np.sqrt(_dot(u, u))

    def project(self, x):
        raise NotImplementedError

    def to_tangent(self, x, w):
        raise NotImplementedError

    def frame(self, x) -> np.ndarray:
        """Orthonormal basis of T_x M as the columns of an ``(ambient_dim, dim)`` matrix."""
        raise NotImplementedError

    def complement_frame(self, x, v) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement of unit ``v`` in T_x M."""
        basis = self.frame(x)
        cols = []
        for k in range(basis.shape[1]):
            w = basis[:, k] - np.dot(basis[:, k], v) * v
            for c in cols:
                w = w - np.dot(w, c) * c
            nw = np.linalg.norm(w)
            if nw > 1e-6:
                cols.append(w / nw)
        return np.stack(cols[: self.dim - 1], axis=1)

    def difference(self, y, z):
        """Displacement from ``y`` to a nearby ``z`` (ambient or unwrapped chart)."""
        return z - y

    # -- geodesics ---------------------------------------------------------
    def flow(self, x, w, t=1.0):
        """State ``(gamma(t), gamma'(t))`` of the geodesic with ``gamma'(0) = w``."""
        raise NotImplementedError

    def exp_map(self, x, w):
        return self.flow(x, w, 1.0)[0]

    def log_map(self, x, y):
        w, ok = self._log(x, y)
        if not np.all(ok):
            raise CutLocusError("cut-locus")
        return w

    def _log(self, x, y):
        raise NotImplementedError

    def dist(self, x, y):
        w, ok = self._log(x, y)
        return np.where(ok, self.norm(x, w), np.inf)

    def transport(self, x, w, vec):
        """Parallel transport of ``vec`` along ``s -> exp_x(s w)``, ``s in [0, 1]``."""
        raise NotImplementedError

    def jacobi(self, x, xdot, J0, K0):
        """``(J(1), J'(1))`` for the Jacobi field along the unit-time geodesic from ``(x, xdot)``."""
        raise NotImplementedError

    def curvature_term(self, x, gdot, J):
        """``R(gdot, J) gdot`` with ``R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``."""
        raise NotImplementedError

    def step_count(self, length: float) -> int:
        return max(64, int(math.ceil(64.0 * length / self.injectivity_radius)))

    # -- convenience wrappers on TangentVector / GeodesicArc ---------------
    def geodesic_flow(self, state: TangentVector, t: float) -> TangentVector:
        x, w = self.flow(state.base, state.vec, t)
        return TangentVector(x, w)

    def geodesic(self, x, w, duration: float = 1.0, steps: int | None = None) -> GeodesicArc:
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        length = duration * float(np.linalg.norm(w))
        steps = steps or self.step_count(length)
        s = np.linspace(0.0, duration, steps + 1)
        xs = np.broadcast_to(x, (steps + 1, x.size))
        ws = np.broadcast_to(w, (steps + 1, w.size))
        pts, vels = self.flow(xs, ws, s[:, None])
        return GeodesicArc(TangentVector(x, w), float(duration), pts, vels)

    def parallel_transport(self, arc: GeodesicArc, w):
        x0, v0 = arc.initial.base, arc.initial.vec
        return self.transport(x0, arc.duration * v0, np.asarray(w, dtype=float))

    # -- sampling ------------------------------------------------------------
    def sample_points(self, count: int, seed: int = 0) -> np.ndarray:
        raise NotImplementedError

    def unit_directions(self, x, count: int, seed: int = 0) -> np.ndarray:
        """``count`` deterministic unit tangent vectors at ``x``."""
        basis = self.frame(x)
        n = self.dim
        if n == 2:
            phase = 0.0 if seed == 0 else np.random.default_rng(seed).uniform(0, 2 * np.pi / count)
            ang = phase + 2 * np.pi * np.arange(count) / count
            coords = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:
            coords = _sphere_points(n - 1, count, seed)
        return coords @ basis.T


def _halton(count: int, dim: int, seed: int) -> np.ndarray:
    from scipy.stats import qmc

    sampler = qmc.Halton(d=dim, scramble=seed != 0, seed=seed if seed else None)
    pts = sampler.random(count + 1)[1:]
    return pts


def _sphere_points(n: int, count: int, seed: int) -> np.ndarray:
    """Quasi-uniform points on the unit n-sphere in R^(n+1)."""
    if n == 2:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        golden = np.pi * (3.0 - np.sqrt(5.0))
        phase = 0.0 if seed == 0 else np.random.default_rng(seed).uniform(0, 2 * np.pi)
        phi = golden * np.arange(count) + phase
        r = np.sqrt(1.0 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if n == 1:
        phase = 0.0 if seed == 0 else np.random.default_rng(seed).uniform(0, 2 * np.pi / count)
        ang = phase + 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    from scipy.special import ndtri

    u = np.clip(_halton(count, n + 1, seed), 1e-12, 1 - 1e-12)
    g = ndtri(u)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


class EmbeddedHypersurface(Manifold):
    """Hypersurface of R^(n+1) described by a unit normal field and its derivative.

    Geodesics, parallel transport and Jacobi fields are integrated with fixed-step
    RK4 in ambient coordinates, reprojecting onto the surface after every step.
    """

    def normal(self, x):
        raise NotImplementedError

    def shape(self, x, X):
        """Ambient derivative of the unit normal field in direction ``X``."""
        raise NotImplementedError

    def to_tangent(self, x, w):
        nrm = self.normal(x)
        return w - _dot(w, nrm)[..., None] * nrm

    def frame(self, x):
        x = np.asarray(x, dtype=float)
        nrm = self.normal(x)
        order = np.argsort(np.abs(nrm), kind="stable")
        cols = []
        for i in order:
            e = np.zeros(self.ambient_dim)
            e[i] = 1.0
            w = e - np.dot(e, nrm) * nrm
            for c in cols:
                w = w - np.dot(w, c) * c
            nw = np.linalg.norm(w)
            if nw > 1e-6:
                cols.append(w / nw)
            if len(cols) == self.dim:
                break
        return np.stack(cols, axis=1)

    def curvature_term(self, x, gdot, J):
        Wg = self.shape(x, gdot)
        WJ = self.shape(x, J)
        return _dot(WJ, gdot)[..., None] * Wg - _dot(Wg, gdot)[..., None] * WJ

    def _split(self, state, k):
        d = self.ambient_dim
        return [state[..., i * d:(i + 1) * d] for i in range(k)]

    def _fix(self, state, k):
        parts = self._split(state, k)
        x = self.project(parts[0])
        out = [x] + [self.to_tangent(x, p) for p in parts[1:]]
        return np.concatenate(out, axis=-1)

    def _geo_rhs(self, state, k):
        parts = self._split(state, k)
        x, xd = parts[0], parts[1]
        nrm = self.normal(x)
        Wx = self.shape(x, xd)
        out = [xd, -_dot(xd, Wx)[..., None] * nrm]
        if k == 4:
            J, K = parts[2], parts[3]
            out.append(K - _dot(J, Wx)[..., None] * nrm)
            out.append(self.curvature_term(x, xd, J) - _dot(K, Wx)[..., None] * nrm)
        elif k == 3:
            V = parts[2]
            out.append(-_dot(V, Wx)[..., None] * nrm)
        return np.concatenate(out, axis=-1)

    def _integrate(self, parts, t, k, steps=None):
        state = np.concatenate(np.broadcast_arrays(*parts), axis=-1).astype(float)
        t = np.asarray(t, dtype=float)
        speed = float(np.max(np.linalg.norm(np.asarray(parts[1]), axis=-1) * np.max(np.abs(t))))
        steps = steps or self.step_count(speed)
        h = t / steps
        if h.ndim:
            h = h[..., None] if h.shape[-1:] != (1,) else h
        out = _rk4(lambda s: self._geo_rhs(s, k), state, h, steps, lambda s: self._fix(s, k))
        return self._split(out, k)

    def flow(self, x, w, t=1.0, steps=None):
        x, w = self._integrate([np.asarray(x, float), np.asarray(w, float)], t, 2, steps)
        return x, w

    def transport(self, x, w, vec, steps=None):
        return self._integrate([np.asarray(x, float), np.asarray(w, float), np.asarray(vec, float)], 1.0, 3, steps)[2]

    def jacobi(self, x, xdot, J0, K0, steps=None):
        parts = self._integrate([np.asarray(a, float) for a in (x, xdot, J0, K0)], 1.0, 4, steps)
        return parts[2], parts[3]

    def _log(self, x, y, tol=1e-12, max_iter=50):
        """Inverse of exp by Newton shooting, all pairs of the batch at once."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        X = np.broadcast_to(x, shape).reshape(-1, self.ambient_dim)
        Y = np.broadcast_to(y, shape).reshape(-1, self.ambient_dim)
        n, h = self.dim, 1e-7
        basis = np.array([self.frame(p) for p in X])
        a = np.einsum("bdk,bd->bk", basis, Y - X)
        live = np.ones(len(X), bool)
        for _ in range(max_iter):
            idx = np.flatnonzero(live)
            if not idx.size:
                break
            B, A, P = basis[idx], a[idx], X[idx]
            # base direction and n forward-difference probes in one integrator call
            probes = A[:, None, :] + h * np.eye(n)[None]
            dirs = np.concatenate([A[:, None, :], probes], axis=1)
            ends = self.exp_map(np.repeat(P, n + 1, axis=0),
                                np.einsum("bdk,bjk->bjd", B, dirs).reshape(-1, self.ambient_dim))
            ends = ends.reshape(len(idx), n + 1, self.ambient_dim)
            err = ends[:, 0] - Y[idx]
            done = np.linalg.norm(err, axis=1) < tol
            live[idx[done]] = False
            step = ~done
            if not np.any(step):
                break
            jac = np.einsum("bdk,bjd->bkj", B, ends[:, 1:] - ends[:, :1]) / h
            r = np.einsum("bdk,bd->bk", B, err)
            upd = np.zeros_like(A)
            try:
                upd[step] = np.linalg.solve(jac[step], r[step][..., None])[..., 0]
            except np.linalg.LinAlgError:
                upd[step] = np.einsum("bkj,bj->bk", np.linalg.pinv(jac[step]), r[step])
            a[idx] = A - upd
        w = np.einsum("bdk,bk->bd", basis, a)
        ok = (np.linalg.norm(self.exp_map(X, w) - Y, axis=1) < 1e-9) & \
            (np.linalg.norm(a, axis=1) < self.injectivity_radius)
        return w.reshape(shape), ok.reshape(shape[:-1]) if len(shape) > 1 else bool(ok[0])
        basis = self.frame(x)
        a = basis.T @ (y - x)
        for _ in range(max_iter):
            end = self.exp_map(x, basis @ a)
            r = basis.T @ (end - y)
            if np.linalg.norm(end - y) < tol:
                break
            jac = np.empty((self.dim, self.dim))
            h = 1e-7
            for k in range(self.dim):
                da = np.zeros(self.dim)
                da[k] = h
                jac[:, k] = basis.T @ (self.exp_map(x, basis @ (a + da)) - end) / h
            a = a - np.linalg.solve(jac, r)
        w = basis @ a
        ok = bool(np.linalg.norm(self.exp_map(x, w) - y) < 1e-9 and np.linalg.norm(a) < self.injectivity_radius)
        return w, ok


class RoundSphere(EmbeddedHypersurface):
    """Round n-sphere of radius ``r`` centred at the origin of R^(n+1).

    Geodesics, transport and Jacobi fields use the great-circle closed forms by
    default; ``closed_form=False`` switches to the generic RK4 integrator.
    """

    def __init__(self, dim: int = 2, radius: float = 1.0, closed_form: bool = True):
        if dim < 2:
            raise ValueError("round-sphere needs dim >= 2")
        self.name = "round-sphere"
        self.dim = int(dim)
        self.ambient_dim = self.dim + 1
        self.radius = float(radius)
        self.injectivity_radius = math.pi * self.radius
        self.zoll_length = 2 * math.pi * self.radius
        self.closed_form = closed_form

    @property
    def config(self):
        return {"kind": "round-sphere", "dim": self.dim, "radius": self.radius}

    def project(self, x):
        return self.radius * x / np.linalg.norm(x, axis=-1, keepdims=True)

    def normal(self, x):
        return x / self.radius

    def shape(self, x, X):
        return X / self.radius

    def curvature_term(self, x, gdot, J):
        r2 = self.radius ** 2
        return (_dot(J, gdot)[..., None] * gdot - _dot(gdot, gdot)[..., None] * J) / r2

    def flow(self, x, w, t=1.0, steps=None):
        if not self.closed_form:
            return super().flow(x, w, t, steps)
        x = np.asarray(x, float)
        w = np.asarray(w, float)
        t = np.asarray(t, float)
        if t.ndim and t.shape[-1:] != (1,):
            t = t[..., None]
        L = np.linalg.norm(w, axis=-1, keepdims=True)
        safe = np.where(L > 0, L, 1.0)
        u = w / safe
        om = L * t / self.radius
        xt = np.cos(om) * x + self.radius * np.sin(om) * u
        wt = L * (-np.sin(om) * x / self.radius + np.cos(om) * u)
        xt = np.where(L > 0, xt, x)
        wt = np.where(L > 0, wt, w)
        return xt, wt

    def _log(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        r = self.radius
        c = _dot(x, y)[..., None] / (r * r)
        p = y - c * x
        s = np.linalg.norm(p, axis=-1, keepdims=True) / r
        alpha = np.arctan2(s, c)
        w = p / np.sinc(alpha / np.pi)
        ok = alpha[..., 0] < math.pi - 1e-7
        return w, ok

    def transport(self, x, w, vec, steps=None):
        if not self.closed_form:
            return super().transport(x, w, vec, steps)
        x, w, vec = (np.asarray(a, float) for a in (x, w, vec))
        L = np.linalg.norm(w, axis=-1, keepdims=True)
        safe = np.where(L > 0, L, 1.0)
        T0 = w / safe
        om = L / self.radius
        a = _dot(vec, T0)[..., None]
        T1 = -np.sin(om) * x / self.radius + np.cos(om) * T0
        out = vec + a * (T1 - T0)
        return np.where(L > 0, out, vec)

    def jacobi(self, x, xdot, J0, K0, steps=None):
        if not self.closed_form:
            return super().jacobi(x, xdot, J0, K0, steps)
        x, xdot, J0, K0 = (np.asarray(a, float) for a in (x, xdot, J0, K0))
        L = np.linalg.norm(xdot, axis=-1, keepdims=True)
        if np.all(L == 0):
            return J0 + K0, K0
        T0 = xdot / np.where(L > 0, L, 1.0)
        om = L / self.radius
        a, b = _dot(J0, T0)[..., None], _dot(K0, T0)[..., None]
        Jn, Kn = J0 - a * T0, K0 - b * T0
        T1 = -np.sin(om) * x / self.radius + np.cos(om) * T0
        sinc = np.sin(om) / np.where(om > 0, om, 1.0)
        sinc = np.where(om > 0, sinc, 1.0)
        J1 = (a + b) * T1 + np.cos(om) * Jn + sinc * Kn
        K1 = b * T1 - om * np.sin(om) * Jn + np.cos(om) * Kn
        return J1, K1

    def sample_points(self, count, seed=0):
        return self.radius * _sphere_points(self.dim, count, seed)


class Ellipsoid(EmbeddedHypersurface):
    """Ellipsoid ``sum x_i^2 / a_i^2 = 1``.  Not Zoll; integrator-backed throughout."""

    def __init__(self, semi_axes):
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        if self.semi_axes.ndim != 1 or self.semi_axes.size < 3 or np.any(self.semi_axes <= 0):
            raise ValueError("ellipsoid needs >= 3 positive semi-axes")
        self.name = "ellipsoid"
        self.ambient_dim = self.semi_axes.size
        self.dim = self.ambient_dim - 1
        # heuristic lower bound, not computed
        self.injectivity_radius = float(self.semi_axes.min()) * math.pi / 2
        self.zoll_length = None
        self._h = 2.0 / self.semi_axes ** 2

    @property
    def config(self):
        return {"kind": "ellipsoid", "semi_axes": self.semi_axes.tolist()}

    def project(self, x):
        g = np.sum(x * x / self.semi_axes ** 2, axis=-1, keepdims=True)
        return x / np.sqrt(g)

    def normal(self, x):
        grad = self._h * x
        return grad / np.linalg.norm(grad, axis=-1, keepdims=True)

    def shape(self, x, X):
        grad = self._h * x
        ng = np.linalg.norm(grad, axis=-1, keepdims=True)
        nrm = grad / ng
        hx = self._h * X
        return (hx - _dot(hx, nrm)[..., None] * nrm) / ng

    def sample_points(self, count, seed=0):
        return _sphere_points(self.dim, count, seed) * self.semi_axes


class FlatTorus(Manifold):
    """``R^n / (periods * Z^n)`` in chart coordinates, points reduced to ``[0, P)``."""

    def __init__(self, dim: int = 2, periods=2 * math.pi):
        if dim < 2:
            raise ValueError("flat-torus needs dim >= 2")
        self.name = "flat-torus"
        self.dim = self.ambient_dim = int(dim)
        p = np.broadcast_to(np.asarray(periods, dtype=float), (self.dim,)).copy()
        self.periods = p
        self.injectivity_radius = float(p.min()) / 2
        self.zoll_length = None

    @property
    def config(self):
        return {"kind": "flat-torus", "dim": self.dim, "periods": self.periods.tolist()}

    def project(self, x):
        return np.mod(x, self.periods)

    def to_tangent(self, x, w):
        return np.asarray(w, float)

    def frame(self, x):
        return np.eye(self.dim)

    def wrap(self, d):
        return d - self.periods * np.round(d / self.periods)

    def difference(self, y, z):
        return self.wrap(np.asarray(z, float) - np.asarray(y, float))

    def flow(self, x, w, t=1.0, steps=None):
        x, w = np.asarray(x, float), np.asarray(w, float)
        t = np.asarray(t, float)
        if t.ndim and t.shape[-1:] != (1,):
            t = t[..., None]
        return np.mod(x + t * w, self.periods), np.broadcast_to(w, np.broadcast_shapes(w.shape, (x + t * w).shape)).copy()

    def _log(self, x, y):
        d = self.wrap(np.asarray(y, float) - np.asarray(x, float))
        ok = np.all(np.abs(d) < self.periods / 2 - 1e-12, axis=-1)
        return d, ok

    def transport(self, x, w, vec, steps=None):
        return np.asarray(vec, float)

    def jacobi(self, x, xdot, J0, K0, steps=None):
        J0, K0 = np.asarray(J0, float), np.asarray(K0, float)
        return J0 + K0, K0.copy()

    def curvature_term(self, x, gdot, J):
        return np.zeros_like(np.asarray(J, float))

    def sample_points(self, count, seed=0):
        n = self.dim
        side = round(count ** (1.0 / n))
        if side ** n == count:
            g = (np.arange(side) + 0.5) / side
            mesh = np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)
            if seed:
                mesh = mesh + np.random.default_rng(seed).uniform(-0.5, 0.5, n) / side
            return np.mod(mesh, 1.0) * self.periods
        return _halton(count, n, seed) * self.periods


def make_manifold(config: dict) -> Manifold:
    kind = config.get("kind")
    if kind == "round-sphere":
        return RoundSphere(config.get("dim", 2), config.get("radius", 1.0),
                           closed_form=config.get("closed_form", True))
    if kind == "flat-torus":
        return FlatTorus(config.get("dim", 2), config.get("periods", 2 * math.pi))
    if kind == "ellipsoid":
        return Ellipsoid(config["semi_axes"])
    raise ValueError(f"unknown manifold kind {kind!r}")
