"""Smooth self-maps of a manifold, their derivatives, adjoints and lifts.

Linear maps between tangent spaces are carried as ambient matrices ``D`` with
``df_x u = D @ u`` for tangent ``u``.  Frame matrices use the deterministic
orthonormal frames of :meth:`Manifold.frame`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IntegratorError, NotADiffeomorphismError
from .geometry import EmbeddedHypersurface, FlatTorus, Manifold, RoundSphere, TangentVector

COND_LIMIT = 1e8


@dataclass(frozen=True)
class LinearMap:
    """Linear map ``T_x M -> T_y M`` stored in orthonormal frames."""

    matrix: np.ndarray
    domain_frame: np.ndarray
    codomain_frame: np.ndarray

    def __call__(self, u):
        return self.codomain_frame @ (self.matrix @ (self.domain_frame.T @ u))

    @property
    def T(self) -> "LinearMap":
        return LinearMap(self.matrix.T, self.codomain_frame, self.domain_frame)


class SmoothMap:
    manifold: Manifold
    analytic = True
    is_diffeomorphism = True

    @property
    def config(self) -> dict:
        raise NotImplementedError

    def eval(self, x):
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        """Ambient matrix ``D`` with ``df_x u = D u`` for tangent ``u``."""
        raise NotImplementedError

    def second_differential(self, x, u, v):
        raise NotImplementedError

    def eval_jacobian(self, x):
        return self.eval(x), self.jacobian(x)

    # -- derived operations -------------------------------------------------
    def differential(self, x, u):
        return self.manifold.to_tangent(self.eval(x), self.jacobian(x) @ u)

    def adjoint_differential(self, x, w):
        return self.manifold.to_tangent(x, self.jacobian(x).T @ w)

    def frames(self, x):
        x = np.asarray(x, float)
        return self.manifold.frame(x), self.manifold.frame(self.eval(x))

    def differential_map(self, x) -> LinearMap:
        ex, ey = self.frames(x)
        return LinearMap(ey.T @ self.jacobian(x) @ ex, ex, ey)

    def _checked_inverse_adjoint(self, dmap: LinearMap) -> LinearMap:
        if np.linalg.cond(dmap.matrix) > COND_LIMIT:
            raise NotADiffeomorphismError("not-a-diffeomorphism")
        return LinearMap(np.linalg.inv(dmap.matrix).T, dmap.domain_frame, dmap.codomain_frame)

    def inverse_adjoint_map(self, x) -> LinearMap:
        """``df_x^{-T}`` as a map ``T_x M -> T_{f(x)} M``."""
        return self._checked_inverse_adjoint(self.differential_map(x))

    def inverse_adjoint(self, x, w):
        return self.inverse_adjoint_map(x)(w)

    def second_tensor(self, x) -> np.ndarray:
        """``T[i, j] = d^2 f[e_i, e_j]`` (ambient vectors) for the frame at ``x``."""
        ex = self.manifold.frame(x)
        n = ex.shape[1]
        out = np.zeros((n, n, self.manifold.ambient_dim))
        for i in range(n):
            for j in range(i, n):
                out[i, j] = out[j, i] = self.second_differential(x, ex[:, i], ex[:, j])
        return out

    def second_map(self, x, u, tensor=None) -> LinearMap:
        """The map ``w -> d^2 f[u, w]`` from ``T_x M`` to ``T_{f(x)} M``."""
        ex, ey = self.frames(x)
        tensor = self.second_tensor(x) if tensor is None else tensor
        cu = ex.T @ u
        vecs = np.einsum("i,ijd->jd", cu, tensor)
        return LinearMap(ey.T @ vecs.T, ex, ey)

    def nabla_inverse_adjoint(self, x, u, tensor=None) -> LinearMap:
        """``nabla_u (df^{-T}) = -df^{-T} (nabla_u df)^T df^{-T}``."""
        inv_t = self.inverse_adjoint_map(x)
        b = self.second_map(x, u, tensor)
        return LinearMap(-inv_t.matrix @ b.matrix.T @ inv_t.matrix, inv_t.domain_frame, inv_t.codomain_frame)

    def contact_lift(self, state: TangentVector) -> TangentVector:
        x = np.asarray(state.base, float)
        w = self.inverse_adjoint(x, np.asarray(state.vec, float))
        return TangentVector(self.eval(x), w / np.linalg.norm(w))

    def symplectic_lift(self, state: TangentVector) -> TangentVector:
        x = np.asarray(state.base, float)
        return TangentVector(self.eval(x), self.inverse_adjoint(x, np.asarray(state.vec, float)))


class IdentityMap(SmoothMap):
    def __init__(self, manifold: Manifold):
        self.manifold = manifold

    @property
    def config(self):
        return {"kind": "identity"}

    def eval(self, x):
        return np.array(x, dtype=float)

    def jacobian(self, x):
        return np.eye(self.manifold.ambient_dim)

    def second_differential(self, x, u, v):
        return np.zeros(self.manifold.ambient_dim)

    def second_tensor(self, x):
        n = self.manifold.dim
        return np.zeros((n, n, self.manifold.ambient_dim))


def rotation_matrix(dim: int, angle: float, axis=None, plane=None) -> np.ndarray:
    if axis is not None:
        if dim != 3:
            raise ConfigError("rotation axis only makes sense in R^3; use 'plane'")
        k = np.asarray(axis, float)
        k = k / np.linalg.norm(k)
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K
    i, j = plane if plane is not None else (0, 1)
    R = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    R[i, i] = R[j, j] = c
    R[i, j], R[j, i] = -s, s
    return R


class SphereRotation(SmoothMap):
    """Restriction of an ambient rotation to an invariant hypersurface."""

    def __init__(self, manifold: EmbeddedHypersurface, angle: float, axis=None, plane=None):
        if not isinstance(manifold, EmbeddedHypersurface):
            raise ConfigError("sphere-rotation needs an embedded model")
        self.manifold = manifold
        self.angle = float(angle)
        self.axis = None if axis is None else [float(a) for a in axis]
        self.plane = None if plane is None else [int(p) for p in plane]
        if self.axis is None and self.plane is None and manifold.ambient_dim == 3:
            self.axis = [0.0, 0.0, 1.0]
        self.R = rotation_matrix(manifold.ambient_dim, self.angle, self.axis, self.plane)
        pts = manifold.sample_points(32)
        if np.max(np.abs(manifold.project(pts @ self.R.T) - pts @ self.R.T)) > 1e-9:
            raise ConfigError("rotation does not preserve this manifold")

    @property
    def config(self):
        cfg = {"kind": "sphere-rotation", "angle": self.angle}
        if self.axis is not None:
            cfg["axis"] = self.axis
        if self.plane is not None:
            cfg["plane"] = self.plane
        return cfg

    def eval(self, x):
        return np.asarray(x, float) @ self.R.T

    def jacobian(self, x):
        return self.R

    def second_differential(self, x, u, v):
        m = self.manifold
        x = np.asarray(x, float)
        coef = np.dot(v, m.shape(x, u))
        return -coef * m.to_tangent(self.eval(x), self.R @ m.normal(x))


class TorusTranslation(SmoothMap):
    """``x -> x + shift + shear * sin(x_2) e_1`` on a flat torus."""

    def __init__(self, manifold: FlatTorus, shift, shear: float = 0.0):
        if not isinstance(manifold, FlatTorus):
            raise ConfigError("torus-translation needs a flat-torus")
        self.manifold = manifold
        self.shift = np.broadcast_to(np.asarray(shift, float), (manifold.dim,)).copy()
        self.shear = float(shear)

    @property
    def config(self):
        return {"kind": "torus-translation", "shift": self.shift.tolist(), "shear": self.shear}

    def eval(self, x):
        x = np.asarray(x, float)
        y = x + self.shift
        y[..., 0] = y[..., 0] + self.shear * np.sin(x[..., 1])
        return self.manifold.project(y)

    def jacobian(self, x):
        D = np.eye(self.manifold.dim)
        D[0, 1] = self.shear * math.cos(x[1])
        return D

    def second_differential(self, x, u, v):
        out = np.zeros(self.manifold.dim)
        out[0] = -self.shear * math.sin(x[1]) * u[1] * v[1]
        return out


class FiniteDifferenceMap(SmoothMap):
    """Derivatives of a pointwise evaluator by central differences in exp charts."""

    analytic = False
    H1 = 1e-5
    H2 = 1e-4

    def __init__(self, manifold: Manifold, evaluator, config: dict | None = None, diffeomorphism=True):
        self.manifold = manifold
        self._evaluator = evaluator
        self._config = config or {"kind": "finite-difference"}
        self.is_diffeomorphism = diffeomorphism

    @classmethod
    def wrap(cls, fmap: SmoothMap) -> "FiniteDifferenceMap":
        cfg = {"kind": "finite-difference", "of": fmap.config}
        return cls(fmap.manifold, fmap.eval, cfg, fmap.is_diffeomorphism)

    @property
    def config(self):
        return dict(self._config)

    def eval(self, x):
        return self.manifold.project(self._evaluator(np.asarray(x, float)))

    def jacobian(self, x):
        return self.eval_jacobian(x)[1]

    def eval_jacobian(self, x):
        m = self.manifold
        x = np.asarray(x, float)
        ex = m.frame(x)
        h = self.H1 * (1.0 + np.linalg.norm(x))
        steps = np.concatenate([h * ex.T, -h * ex.T])
        vals = self.eval(np.concatenate([x[None], m.exp_map(np.broadcast_to(x, steps.shape), steps)]))
        fx, plus, minus = vals[0], vals[1:1 + ex.shape[1]], vals[1 + ex.shape[1]:]
        cols = (m.difference(fx, plus) - m.difference(fx, minus)) / (2 * h)
        cols = m.to_tangent(fx, cols)
        return fx, cols.T @ ex.T

    def _mixed(self, x, pairs):
        """Mixed second differences for a list of (u, v) unit pairs."""
        m = self.manifold
        h = self.H2
        signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], float)
        w = np.array([1.0, -1.0, -1.0, 1.0])
        steps = np.array([[h * (a * u + b * v) for a, b in signs] for u, v in pairs]).reshape(-1, x.size)
        fx = self.eval(x)
        vals = self.eval(m.exp_map(np.broadcast_to(x, steps.shape), steps))
        diffs = m.difference(fx, vals).reshape(len(pairs), 4, -1)
        out = np.einsum("k,pkd->pd", w, diffs) / (4 * h * h)
        return m.to_tangent(fx, out)

    def second_differential(self, x, u, v):
        x = np.asarray(x, float)
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            return np.zeros(self.manifold.ambient_dim)
        return nu * nv * self._mixed(x, [(u / nu, v / nv)])[0]

    def second_tensor(self, x):
        x = np.asarray(x, float)
        ex = self.manifold.frame(x)
        n = ex.shape[1]
        idx = [(i, j) for i in range(n) for j in range(i, n)]
        vals = self._mixed(x, [(ex[:, i], ex[:, j]) for i, j in idx])
        out = np.zeros((n, n, self.manifold.ambient_dim))
        for (i, j), val in zip(idx, vals):
            out[i, j] = out[j, i] = val
        return out


# -- vector fields for flow maps ----------------------------------------------

DEFAULT_SPHERE_QUADRATIC = (0.6, -0.3, 0.0)
DEFAULT_TORUS_MODES = (
    # (amplitude, wave vector, phase)
    (1.0, (1, 0), 0.0),
    (0.7, (0, 1), 0.0),
    (0.3, (1, 1), 0.5),
)


class HeightGradient:
    """Tangential gradient of ``h(x) = <a, x> + x.B.x / 2`` on an embedded model."""

    def __init__(self, manifold: EmbeddedHypersurface, linear=None, quadratic=None):
        d = manifold.ambient_dim
        self.manifold = manifold
        a = np.zeros(d)
        a[-1] = 1.0
        self.linear = a if linear is None else np.asarray(linear, float)
        if quadratic is None:
            diag = np.zeros(d)
            diag[: min(3, d)] = DEFAULT_SPHERE_QUADRATIC[: min(3, d)]
            quadratic = np.diag(diag) if d != 3 else np.diag(DEFAULT_SPHERE_QUADRATIC)
        q = np.asarray(quadratic, float)
        self.quadratic = np.diag(q) if q.ndim == 1 else q
        self.quadratic = 0.5 * (self.quadratic + self.quadratic.T)

    @property
    def config(self):
        return {"field": "height-gradient", "linear": self.linear.tolist(), "quadratic": self.quadratic.tolist()}

    def __call__(self, x):
        g = self.linear + x @ self.quadratic.T
        if isinstance(self.manifold, RoundSphere):
            return g - (g * x).sum(axis=-1, keepdims=True) * x / self.manifold.radius ** 2
        return self.manifold.to_tangent(x, g)


class TorusHeightGradient:
    """Gradient of ``h(x) = sum_k c_k cos(<m_k, x> * 2 pi / P + phi_k)`` on a flat torus."""

    def __init__(self, manifold: FlatTorus, modes=None):
        self.manifold = manifold
        modes = DEFAULT_TORUS_MODES if modes is None else modes
        self.modes = [(float(c), tuple(int(k) for k in m), float(p)) for c, m, p in modes]
        n = manifold.dim
        for _, m, _ in self.modes:
            if len(m) != n:
                raise ConfigError("torus mode wave vectors must have length dim")

    @property
    def config(self):
        return {"field": "height-gradient", "modes": [[c, list(m), p] for c, m, p in self.modes]}

    def __call__(self, x):
        out = np.zeros_like(x)
        scale = 2 * np.pi / self.manifold.periods
        for c, m, p in self.modes:
            k = np.asarray(m, float) * scale
            out = out - c * np.sin(x @ k + p)[..., None] * k
        return out


def make_field(manifold: Manifold, config: dict):
    name = config.get("field", "height-gradient")
    if name != "height-gradient":
        raise ConfigError(f"unknown vector field {name!r}")
    if isinstance(manifold, FlatTorus):
        return TorusHeightGradient(manifold, config.get("modes"))
    return HeightGradient(manifold, config.get("linear"), config.get("quadratic"))


class FlowMap(FiniteDifferenceMap):
    """Time-``time`` flow of ``epsilon * X``; derivatives by finite differences.

    On the torus the flow is integrated in the universal cover so the evaluator
    stays smooth across the chart seam.
    """

    def __init__(self, manifold: Manifold, field, epsilon: float, time: float = 1.0, steps: int = 32):
        self.field = field
        self.epsilon = float(epsilon)
        self.time = float(time)
        self.steps = int(steps)
        cfg = {"kind": "flow", **field.config, "epsilon": self.epsilon}
        if self.time != 1.0:
            cfg["time"] = self.time
        super().__init__(manifold, self._flow, cfg)

    def _vector(self, x):
        return self.epsilon * self.field(x)

    def _advance(self, x, h, count):
        """``count`` RK4 steps of size ``h`` with reprojection (chart coordinates on the torus)."""
        F = self.field
        eh = self.epsilon * h
        reproject = not isinstance(self.manifold, FlatTorus)
        for _ in range(count):
            k1 = F(x)
            k2 = F(x + 0.5 * eh * k1)
            k3 = F(x + 0.5 * eh * k2)
            k4 = F(x + eh * k3)
            x = x + (eh / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if reproject:
                x = self.manifold.project(x)
        if not np.all(np.isfinite(x)):
            raise IntegratorError("flow integrator produced non-finite values")
        return x

    def _flow(self, x):
        if self.time == 0.0:
            return np.array(x, float)
        return self._advance(np.asarray(x, float), self.time / self.steps, self.steps)

    def track(self, x, samples: int):
        """``s -> flow(s)`` at ``s = k/samples``, sharing one integration."""
        m = self.manifold
        x = np.asarray(x, float)
        sub = max(1, math.ceil(self.steps / samples))
        h = self.time / (samples * sub)
        out = [x]
        for _ in range(samples):
            x = self._advance(x, h, sub)
            out.append(x)
        return m.project(np.stack(out, axis=-2))


class Composite(SmoothMap):
    """``outer o inner``."""

    def __init__(self, outer: SmoothMap, inner: SmoothMap):
        self.outer, self.inner = outer, inner
        self.manifold = inner.manifold
        self.analytic = outer.analytic and inner.analytic
        self.is_diffeomorphism = outer.is_diffeomorphism and inner.is_diffeomorphism

    @property
    def config(self):
        return {"kind": "composite", "outer": self.outer.config, "inner": self.inner.config}

    def eval(self, x):
        return self.outer.eval(self.inner.eval(x))

    def jacobian(self, x):
        return self.outer.jacobian(self.inner.eval(x)) @ self.inner.jacobian(x)

    def second_differential(self, x, u, v):
        y = self.inner.eval(x)
        du, dv = self.inner.differential(x, u), self.inner.differential(x, v)
        return self.outer.second_differential(y, du, dv) + self.outer.differential(
            y, self.inner.second_differential(x, u, v))


def make_map(manifold: Manifold, config: dict) -> SmoothMap:
    kind = config.get("kind")
    if kind == "identity":
        return IdentityMap(manifold)
    if kind == "sphere-rotation":
        return SphereRotation(manifold, config["angle"], config.get("axis"), config.get("plane"))
    if kind == "torus-translation":
        return TorusTranslation(manifold, config.get("shift", 0.0), config.get("shear", 0.0))
    if kind == "flow":
        fld = make_field(manifold, config)
        return FlowMap(manifold, fld, config.get("epsilon", 0.05), config.get("time", 1.0),
                       config.get("steps", 32))
    if kind == "finite-difference":
        return FiniteDifferenceMap.wrap(make_map(manifold, config["of"]))
    if kind == "composite":
        return Composite(make_map(manifold, config["outer"]), make_map(manifold, config["inner"]))
    raise ConfigError(f"unknown map kind {kind!r}")


# -- homotopies --------------------------------------------------------------------


class Homotopy:
    """Family ``s -> f_s`` on ``[0, 1]``; ``track`` samples ``s -> f_s(x)``."""

    manifold: Manifold
    track_samples = 64

    @property
    def config(self) -> dict:
        raise NotImplementedError

    def at(self, s: float) -> SmoothMap:
        raise NotImplementedError

    def track(self, x, samples: int | None = None) -> np.ndarray:
        samples = samples or self.track_samples
        return np.stack([self.at(k / samples).eval(x) for k in range(samples + 1)], axis=-2)

    def reversed(self) -> "Homotopy":
        return ReversedHomotopy(self)


class ConstantHomotopy(Homotopy):
    def __init__(self, manifold):
        self.manifold = manifold

    @property
    def config(self):
        return {"kind": "constant"}

    def at(self, s):
        return IdentityMap(self.manifold)

    def track(self, x, samples=None):
        samples = samples or self.track_samples
        x = np.asarray(x, float)
        return np.repeat(x[..., None, :], samples + 1, axis=-2)


class RotationHomotopy(Homotopy):
    def __init__(self, manifold, angle, axis=None, plane=None):
        self.manifold = manifold
        self.angle = float(angle)
        self.axis, self.plane = axis, plane
        self.at(1.0)

    @property
    def config(self):
        cfg = {"kind": "rotation", "angle": self.angle}
        if self.axis is not None:
            cfg["axis"] = list(self.axis)
        if self.plane is not None:
            cfg["plane"] = list(self.plane)
        return cfg

    def at(self, s):
        return SphereRotation(self.manifold, s * self.angle, self.axis, self.plane)


class TranslationHomotopy(Homotopy):
    def __init__(self, manifold, shift, shear=0.0):
        self.manifold = manifold
        self.shift = np.broadcast_to(np.asarray(shift, float), (manifold.dim,)).copy()
        self.shear = float(shear)

    @property
    def config(self):
        return {"kind": "translation", "shift": self.shift.tolist(), "shear": self.shear}

    def at(self, s):
        return TorusTranslation(self.manifold, s * self.shift, s * self.shear)


class FlowHomotopy(Homotopy):
    def __init__(self, manifold, field, epsilon, steps=32):
        self.manifold = manifold
        self.field = field
        self.epsilon = float(epsilon)
        self.steps = steps

    @property
    def config(self):
        return {"kind": "flow", **self.field.config, "epsilon": self.epsilon}

    def at(self, s):
        return FlowMap(self.manifold, self.field, self.epsilon, time=s, steps=self.steps)

    def track(self, x, samples=None):
        samples = samples or self.track_samples
        return FlowMap(self.manifold, self.field, self.epsilon, 1.0, self.steps).track(x, samples)


class ReversedHomotopy(Homotopy):
    def __init__(self, base: Homotopy):
        self.base = base
        self.manifold = base.manifold

    @property
    def config(self):
        return {"kind": "reversed", "of": self.base.config}

    def at(self, s):
        return self.base.at(1.0 - s)

    def track(self, x, samples=None):
        return self.base.track(x, samples)[..., ::-1, :]

    def reversed(self):
        return self.base


def make_homotopy(manifold: Manifold, config: dict) -> Homotopy:
    kind = config.get("kind")
    if kind in ("constant", "identity"):
        return ConstantHomotopy(manifold)
    if kind == "rotation":
        return RotationHomotopy(manifold, config["angle"], config.get("axis"), config.get("plane"))
    if kind == "translation":
        return TranslationHomotopy(manifold, config.get("shift", 0.0), config.get("shear", 0.0))
    if kind == "flow":
        return FlowHomotopy(manifold, make_field(manifold, config), config.get("epsilon", 0.05),
                            config.get("steps", 32))
    raise ConfigError(f"unknown homotopy kind {kind!r}")
