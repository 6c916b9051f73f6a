"""Shooting formulation for translated points and the scan/dedup pipeline.

Unknowns are ``(x, v, t)`` with ``|v| = 1``.  The chord ``gamma(s) = exp_x(s t v)``
must satisfy ``gamma(1) = f(x)`` and ``df_x^T gamma'(1) = gamma'(0)``.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, CutLocusError
from .geometry import EmbeddedHypersurface, FlatTorus, Manifold, RoundSphere, _dot
from .pathspace import restore_negative, reverse_reduction
from .records import ShootingState, TranslatedPointRecord
from .smoothmap import SmoothMap

log = logging.getLogger(__name__)

TOL = 1e-8
MERGE_TOL = 1e-4
FAMILY_LINK = 1.0
FAMILY_MIN_MEMBERS = 50
FAMILY_MIN_DIAMETER = 1e-2


@dataclass
class SolverOptions:
    tol: float = TOL
    max_iter: int = 50
    max_halvings: int = 20
    damping: float = 1e-10
    fd_step: float = 1e-7
    min_decrease: float = 1e-3  # relative progress that counts as not stalling
    patience: int = 3
    t_min: float | None = None
    steps: int | None = None  # integrator override for RK4 models


def default_t_min(manifold: Manifold) -> float:
    return manifold.zoll_length / 100 if manifold.zoll_length else 0.05


class _MapCache:
    """``f(x)`` and ``df_x`` memoised on the exact bytes of ``x``."""

    def __init__(self, fmap: SmoothMap, size: int = 64):
        self.fmap = fmap
        self.size = size
        self._store: OrderedDict[bytes, tuple[np.ndarray, np.ndarray]] = OrderedDict()

    def __call__(self, x):
        key = np.ascontiguousarray(x).tobytes()
        hit = self._store.get(key)
        if hit is None:
            hit = self.fmap.eval_jacobian(x)
            self._store[key] = hit
            if len(self._store) > self.size:
                self._store.popitem(last=False)
        return hit


def _uses_rk4(m: Manifold) -> bool:
    return isinstance(m, EmbeddedHypersurface) and not (isinstance(m, RoundSphere) and m.closed_form)


def _ambient_residual(m: Manifold, cache: _MapCache, x, v, t, steps=None):
    g1, gd1 = m.flow(x, t * v, 1.0, steps) if steps else m.flow(x, t * v, 1.0)
    fx, D = cache(x)
    w, ok = m._log(g1, fx)
    if not np.all(ok):
        raise ConvergenceError("seed-too-far", "f(x) is beyond the cut locus of the chord end")
    r2 = m.to_tangent(x, D.T @ gd1) - t * v
    return np.concatenate([w, r2]), g1


def residual(fmap: SmoothMap, state: ShootingState, steps: int | None = None) -> np.ndarray:
    """Residual of dimension ``2n`` in orthonormal frames at ``gamma(1)`` and at ``x``."""
    if state.t <= 0:
        raise ValueError("residual is defined for positive shifts; use reverse_reduction")
    m = fmap.manifold
    r, g1 = _ambient_residual(m, _MapCache(fmap), state.x, state.v, state.t, steps)
    d = m.ambient_dim
    return np.concatenate([m.frame(g1).T @ r[:d], m.frame(state.x).T @ r[d:]])


def _retract(m: Manifold, x, v, t, z):
    n = m.dim
    E = m.frame(x)
    C = m.complement_frame(x, v)
    step = E @ z[:n]
    x2 = m.exp_map(x, step)
    v2 = m.to_tangent(x2, m.transport(x, step, v + C @ z[n:2 * n - 1]))
    return x2, v2 / np.linalg.norm(v2), t + z[-1]


def _lsq_step(J, r, damping):
    k = J.shape[1]
    A = np.vstack([J, math.sqrt(damping) * np.eye(k)])
    b = np.concatenate([-r, np.zeros(k)])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def newton_solve(fmap: SmoothMap, seed: ShootingState, options: SolverOptions | None = None) -> TranslatedPointRecord:
    """Damped Gauss-Newton from ``seed``; raises :class:`ConvergenceError` on failure."""
    opt = options or SolverOptions()
    if seed.t == 0:
        raise ValueError("zero shift: use fixed_point_solve")
    if seed.t < 0:
        rec = newton_solve(fmap, reverse_reduction(seed), opt)
        rec.state = restore_negative(rec.state)
        rec.geodesic = None
        return rec
    m = fmap.manifold
    t_min = opt.t_min if opt.t_min is not None else default_t_min(m)
    cache = _MapCache(fmap)
    x = m.project(np.asarray(seed.x, float))
    v = m.to_tangent(x, np.asarray(seed.v, float))
    v = v / np.linalg.norm(v)
    t = float(seed.t)
    if t < t_min:
        raise ConvergenceError("t-collapse", f"seed shift {t} below t_min {t_min}")

    def F(x, v, t):
        return _ambient_residual(m, cache, x, v, t, opt.steps)[0]

    r = F(x, v, t)
    norm = float(np.linalg.norm(r))
    k = 2 * m.dim
    it = slow = 0
    while norm >= opt.tol:
        if it >= opt.max_iter:
            raise ConvergenceError("no-convergence", f"residual {norm:.3e} after {it} iterations")
        it += 1
        J = np.empty((r.size, k))
        for j in range(k):
            z = np.zeros(k)
            z[j] = opt.fd_step
            J[:, j] = (F(*_retract(m, x, v, t, z)) - r) / opt.fd_step
        dz = _lsq_step(J, r, opt.damping)
        for _ in range(opt.max_halvings + 1):
            try:
                cand = _retract(m, x, v, t, dz)
                if cand[2] < t_min:
                    raise ConvergenceError("t-collapse")
                rc = F(*cand)
                nc = float(np.linalg.norm(rc))
            except (ConvergenceError, CutLocusError):
                nc = math.inf
            if nc < norm:
                break
            dz = 0.5 * dz
        else:
            if t < t_min * 1.5 or _retract(m, x, v, t, 2 * dz)[2] < t_min:
                raise ConvergenceError("t-collapse", "iterates drift towards the zero-shift stratum")
            raise ConvergenceError("stalled", f"no descent from residual {norm:.3e}")
        slow = slow + 1 if nc > (1.0 - opt.min_decrease) * norm else 0
        if slow >= opt.patience:
            raise ConvergenceError("stalled", f"residual stuck near {nc:.3e}")
        (x, v, t), r, norm = cand, rc, nc
    if t < t_min:
        raise ConvergenceError("t-collapse")
    state = ShootingState(x, v, t)
    rec = TranslatedPointRecord(state, norm, m.geodesic(x, t * v), extra={"iterations": it})
    if _uses_rk4(m):
        steps = 2 * (opt.steps or m.step_count(t))
        check = float(np.linalg.norm(_ambient_residual(m, cache, x, v, t, steps)[0]))
        rec.extra["verified_residual"] = check
        if check > 1e3 * opt.tol:
            raise ConvergenceError("unverified", f"residual {check:.3e} at doubled resolution")
    return rec


def try_solve(fmap, seed, options=None):
    try:
        return newton_solve(fmap, seed, options)
    except (ConvergenceError, CutLocusError) as exc:
        log.debug("seed t=%.4f rejected: %s", seed.t, getattr(exc, "reason", exc))
        return None


# -- distance on SM and dedup -------------------------------------------------


def sm_distance(m: Manifold, xa, va, xb, vb) -> np.ndarray:
    """Geodesic distance of base points plus the angle between transported directions."""
    xa, va, xb, vb = np.broadcast_arrays(*(np.asarray(a, float) for a in (xa, va, xb, vb)))
    w, ok = m._log(xa, xb)
    d = m.norm(xa, w)
    vt = m.transport(xa, w, va)
    vt = m.to_tangent(xb, vt)
    c = _dot(vt, vb) / (np.linalg.norm(vt, axis=-1) * np.linalg.norm(vb, axis=-1))
    ang = np.arccos(np.clip(c, -1.0, 1.0))
    return np.where(ok, d + ang, np.inf)


def sort_records(records):
    return sorted(records, key=lambda r: (r.state.t, tuple(r.state.x), tuple(r.state.v)))


def _pairwise(m, records):
    X = np.array([r.state.x for r in records])
    V = np.array([r.state.v for r in records])
    T = np.array([r.state.t for r in records])
    i, j = np.triu_indices(len(records), 1)
    d = np.full((len(records), len(records)), np.inf)
    if len(i):
        d[i, j] = d[j, i] = sm_distance(m, X[i], V[i], X[j], V[j])
    np.fill_diagonal(d, 0.0)
    return d, np.abs(T[:, None] - T[None, :])


def dedup(records, m: Manifold, tol: float = MERGE_TOL):
    """Drop records within ``tol`` of an earlier one (after a stable sort)."""
    out = []
    for rec in sort_records(records):
        if out:
            near = [o for o in out if abs(o.state.t - rec.state.t) < tol]
            if near:
                d = sm_distance(m, rec.state.x, rec.state.v,
                                np.array([o.state.x for o in near]), np.array([o.state.v for o in near]))
                if np.any(d < tol):
                    continue
        out.append(rec)
    return out


def _family_dimension(m: Manifold, records) -> int:
    """Median rank of local PCA in log coordinates ``(log_x x', v' - P v)`` around each member."""
    X = np.array([r.state.x for r in records])
    V = np.array([r.state.v for r in records])
    if len(X) < 4:
        return 0
    dist, _ = _pairwise(m, records)
    k = min(len(X) - 1, 2 * (2 * m.dim - 1) + 2)
    ranks = []
    for i in range(len(X)):
        nb = np.argsort(dist[i], kind="stable")[1:k + 1]
        nb = nb[np.isfinite(dist[i, nb])]
        if len(nb) < 2:
            continue
        w, _ = m._log(np.broadcast_to(X[i], X[nb].shape), X[nb])
        back, _ = m._log(X[nb], np.broadcast_to(X[i], X[nb].shape))
        dv = m.transport(X[nb], back, V[nb]) - V[i]
        sv = np.linalg.svd(np.concatenate([w, dv], axis=1), compute_uv=False)
        ranks.append(int(np.sum(sv > 0.3 * sv[0])) if sv[0] > 0 else 0)
    return int(np.median(ranks)) if ranks else 0


def dedup_cluster(records, fmap: SmoothMap, link: float = FAMILY_LINK):
    """Merge duplicates and assign ``family_id``.

    Degenerate records at a common shift are joined by single linkage; a cluster
    wider than ``1e-2`` with more than 50 members is flagged ``degenerate-family``.
    Nondegenerate records are singleton families.
    """
    m = fmap.manifold
    recs = dedup(records, m)
    if not recs:
        return []
    dist, dt = _pairwise(m, recs)
    degenerate = np.array([r.nondegenerate is False for r in recs])
    adj = (dist < link) & (dt < MERGE_TOL) & degenerate[:, None] & degenerate[None, :]
    _, labels = connected_components(adj, directed=False)
    order, fid = {}, []
    for lab in labels:
        order.setdefault(lab, len(order))
        fid.append(order[lab])
    out = []
    for k in range(len(order)):
        idx = [i for i in range(len(recs)) if fid[i] == k]
        members = [recs[i] for i in idx]
        sub = dist[np.ix_(idx, idx)]
        finite = sub[np.isfinite(sub)]
        diam = float(finite.max()) if finite.size else 0.0
        flag = len(members) > FAMILY_MIN_MEMBERS and diam > FAMILY_MIN_DIAMETER
        dim = _family_dimension(m, members) if flag else None
        for rec in members:
            rec.family_id = k
            rec.flags = [f for f in rec.flags if f != "degenerate-family"]
            if flag:
                rec.flags.append("degenerate-family")
                rec.extra["family_dim"] = dim
                rec.extra["family_size"] = len(members)
            out.append(rec)
    return sort_records(out)


def families(records) -> dict[int, list[TranslatedPointRecord]]:
    out: dict[int, list] = {}
    for r in records:
        out.setdefault(r.family_id, []).append(r)
    return out


# -- seeding -----------------------------------------------------------------


@dataclass
class ScanOptions:
    points: int | None = None       # base points; default 20^n
    directions: int | None = None   # per point; default 20^(n-1)
    shifts: int = 20                # t samples across the window
    max_seeds: int = 400
    separation: float = 0.05
    classify: bool = True
    threads: int = 1
    seed: int = 0


def _batch_residual_norms(m: Manifold, cache: _MapCache, X, V, T):
    """Residual norms for every ``(point, direction, shift)``; inf where undefined."""
    P, K = V.shape[:2]
    fx = np.array([cache(x)[0] for x in X])
    D = np.array([cache(x)[1] for x in X])
    xs = np.broadcast_to(X[:, None, None, :], (P, K, len(T), X.shape[1]))
    ws = V[:, :, None, :] * T[None, None, :, None]
    g1, gd1 = m.flow(xs.reshape(-1, X.shape[1]), ws.reshape(-1, X.shape[1]), 1.0)
    g1 = g1.reshape(xs.shape)
    gd1 = gd1.reshape(xs.shape)
    w, ok = m._log(g1, np.broadcast_to(fx[:, None, None, :], xs.shape))
    adj = m.to_tangent(xs, np.einsum("pji,pktj->pkti", D, gd1))
    r2 = adj - ws
    norm = np.sqrt(_dot(w, w) + _dot(r2, r2))
    return np.where(ok, norm, np.inf)


def seed_grid(fmap: SmoothMap, a: float, b: float, opt: ScanOptions, cache=None):
    """Candidate seeds ranked by grid residual; local minima along ``t`` only."""
    m = fmap.manifold
    cache = cache or _MapCache(fmap, size=1 << 16)
    n = m.dim
    P = opt.points or 20 ** n
    K = opt.directions or 20 ** (n - 1)
    X = m.sample_points(P, opt.seed)
    V = np.array([m.unit_directions(x, K, opt.seed) for x in X])
    spacing = (m.zoll_length if m.zoll_length and m.zoll_length < b - a else b - a) / opt.shifts
    count = max(2, int(math.floor((b - a) / spacing + 1e-9)))
    T = a + spacing * np.arange(1, count + 1)
    T = T[T > 0]
    norms = _batch_residual_norms(m, cache, X, V, T)
    left = np.concatenate([np.full(norms.shape[:2] + (1,), np.inf), norms[..., :-1]], axis=-1)
    right = np.concatenate([norms[..., 1:], np.full(norms.shape[:2] + (1,), np.inf)], axis=-1)
    is_min = np.isfinite(norms) & (norms <= left) & (norms <= right)
    p, k, j = np.nonzero(is_min)
    vals = norms[p, k, j] / T[j]
    # round-robin over shift bins so short chords (small raw residuals) do not crowd out long ones
    order = np.lexsort((j, k, p, vals))
    rank = np.empty(len(order), dtype=int)
    seen: dict[int, int] = {}
    for pos in order:
        rank[pos] = seen.get(j[pos], 0)
        seen[j[pos]] = rank[pos] + 1
    order = np.lexsort((j, k, p, vals, rank))
    scale = np.array([1.0] * (2 * X.shape[1]) + [1.0 / max(spacing, 1e-12)])
    chosen, feats = [], []
    for idx in order:
        feat = np.concatenate([X[p[idx]], V[p[idx], k[idx]], [T[j[idx]]]]) * scale
        if feats and np.min(np.linalg.norm(np.array(feats) - feat, axis=1)) < opt.separation:
            continue
        feats.append(feat)
        chosen.append(ShootingState(X[p[idx]], V[p[idx], k[idx]], T[j[idx]]))
        if len(chosen) >= opt.max_seeds:
            break
    return chosen


def window_scan(fmap: SmoothMap, window, options: ScanOptions | None = None,
                solver: SolverOptions | None = None):
    """Translated points with shift in ``(a, b]``, deduplicated, classified and sorted."""
    a, b = (float(w) for w in window)
    if not 0 <= a < b:
        raise ValueError("window must satisfy 0 <= a < b")
    opt = options or ScanOptions()
    seeds = seed_grid(fmap, a, b, opt)
    log.info("window (%g, %g]: %d seeds", a, b, len(seeds))

    def run(seed):
        return try_solve(fmap, seed, solver)

    if opt.threads > 1:
        with ThreadPoolExecutor(opt.threads) as pool:
            found = list(pool.map(run, seeds))
    else:
        found = [run(s) for s in seeds]
    recs = [r for r in found if r is not None and a < r.state.t <= b]
    recs = dedup(recs, fmap.manifold)
    if opt.classify:
        from .jacobi import classify

        recs = [classify(fmap, r) for r in recs]
    return dedup_cluster(recs, fmap)


def fixed_point_solve(fmap: SmoothMap, options: ScanOptions | None = None,
                      solver: SolverOptions | None = None):
    """Zero-shift translated points: ``f(x) = x`` and ``df_x^T v = v``."""
    opt = options or ScanOptions()
    sopt = solver or SolverOptions()
    m = fmap.manifold
    cache = _MapCache(fmap, size=1 << 16)
    n = m.dim
    P = opt.points or 20 ** n
    K = opt.directions or 20 ** (n - 1)
    X = m.sample_points(P, opt.seed)
    V = np.array([m.unit_directions(x, K, opt.seed) for x in X])

    def F(x, v):
        fx, D = cache(x)
        w, ok = m._log(x, fx)
        if not np.all(ok):
            raise ConvergenceError("seed-too-far")
        return np.concatenate([w, m.to_tangent(x, D.T @ v) - v])

    fx = np.array([cache(x)[0] for x in X])
    dx = m.dist(X, fx)
    near = np.argsort(dx, kind="stable")
    cands = []
    for i in near:
        if dx[i] > max(0.5, 2 * float(dx[near[0]])):
            break
        for v in V[i]:
            try:
                cands.append((float(np.linalg.norm(F(X[i], v))), i, v))
            except ConvergenceError:
                pass
    cands.sort(key=lambda c: c[0])
    recs = []
    for _, i, v in cands[: opt.max_seeds]:
        x = X[i]
        try:
            r = F(x, v)
            norm = float(np.linalg.norm(r))
            it = 0
            while norm >= sopt.tol:
                if it >= sopt.max_iter:
                    raise ConvergenceError("no-convergence")
                it += 1
                J = np.empty((r.size, 2 * n - 1))
                for j in range(2 * n - 1):
                    z = np.zeros(2 * n)
                    z[j] = sopt.fd_step
                    x2, v2, _ = _retract(m, x, v, 0.0, z)
                    J[:, j] = (F(x2, v2) - r) / sopt.fd_step
                dz = np.append(_lsq_step(J, r, sopt.damping), 0.0)
                for _ in range(sopt.max_halvings + 1):
                    x2, v2, _ = _retract(m, x, v, 0.0, dz)
                    r2 = F(x2, v2)
                    if np.linalg.norm(r2) < norm:
                        break
                    dz = 0.5 * dz
                else:
                    raise ConvergenceError("stalled")
                x, v, r, norm = x2, v2, r2, float(np.linalg.norm(r2))
            J = np.empty((r.size, 2 * n - 1))
            for j in range(2 * n - 1):
                z = np.zeros(2 * n)
                z[j] = sopt.fd_step
                x2, v2, _ = _retract(m, x, v, 0.0, z)
                J[:, j] = (F(x2, v2) - r) / sopt.fd_step
        except (ConvergenceError, CutLocusError):
            continue
        sv = np.linalg.svd(J, compute_uv=False)
        kdim = int(np.sum(sv < 1e-5 * sv[0])) if sv[0] > 0 else 2 * n - 1
        recs.append(TranslatedPointRecord(ShootingState(x, v, 0.0), norm, kernel_dim=kdim,
                                          nondegenerate=kdim == 0, extra={"iterations": it}))
    recs = dedup(recs, m)
    return dedup_cluster(recs, fmap) if recs else []
