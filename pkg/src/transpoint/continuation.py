"""Homotopies of maps: displacement energy, path transport and branch continuation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ConvergenceError, CutLocusError
from .pathspace import DiscretePath, concatenate, energy, shift
from .records import ShootingState, TranslatedPointRecord
from .smoothmap import Homotopy
from .solver import MERGE_TOL, SolverOptions, newton_solve, sm_distance

log = logging.getLogger(__name__)

DELTA_DOUBLING_TOL = 1e-3
MIN_STEP = 1.0 / 320


@dataclass(frozen=True)
class HomotopyTrack:
    base: np.ndarray
    path: DiscretePath
    energy: float


def track(homotopy: Homotopy, x, samples: int | None = None) -> HomotopyTrack:
    nodes = homotopy.track(np.asarray(x, float), samples)
    path = DiscretePath(homotopy.manifold, nodes, None)
    return HomotopyTrack(np.asarray(x, float), path, energy(path))


def track_shifts(homotopy: Homotopy, X, samples: int | None = None) -> np.ndarray:
    """``sqrt(E)`` of the tracks ``s -> f_s(x)`` for a stack of base points."""
    m = homotopy.manifold
    nodes = homotopy.track(np.asarray(X, float), samples)
    seg = m.log_map(nodes[..., :-1, :], nodes[..., 1:, :])
    N = nodes.shape[-2] - 1
    return np.sqrt(N * np.einsum("...ij,...ij->...", seg, seg))


@dataclass
class DeltaEstimate:
    value: float
    grid_value: float
    density: int
    doubled_grid_value: float
    refined: bool
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "grid_value": self.grid_value,
            "density": self.density,
            "doubled_grid_value": self.doubled_grid_value,
            "refined": self.refined,
            "warning": self.warning,
        }


def delta(homotopy: Homotopy, density: int = 20, refine: int = 3, seed: int = 0) -> DeltaEstimate:
    """Estimate ``sup_x sqrt(E(s -> f_s(x)))``.

    The grid maximum (``density^n`` stratified points) is a lower bound; the best
    ``refine`` grid points are polished by a local search in exponential charts.
    The grid is also re-run at doubled density and a warning is attached when the
    two grid values differ by more than ``1e-3``.
    """
    m = homotopy.manifold
    if density < 20:
        raise ValueError("delta needs at least 20 grid points per dimension")
    X = m.sample_points(density ** m.dim, seed)
    vals = track_shifts(homotopy, X)
    grid = float(vals.max())
    X2 = m.sample_points((2 * density) ** m.dim, seed)
    doubled = float(track_shifts(homotopy, X2).max())
    best = grid
    refined = False
    if refine and grid > 0:
        for i in np.argsort(-vals, kind="stable")[:refine]:
            x0 = X[i]
            E = m.frame(x0)

            def neg(a, x0=x0, E=E):
                return -float(track_shifts(homotopy, m.exp_map(x0, E @ a)[None])[0])

            res = minimize(neg, np.zeros(m.dim), method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 400})
            if -res.fun > best:
                best, refined = float(-res.fun), True
    warning = None
    if abs(doubled - grid) > DELTA_DOUBLING_TOL:
        warning = f"grid value moved by {abs(doubled - grid):.2e} when the density was doubled"
        log.warning("delta: %s", warning)
    best = max(best, doubled)
    return DeltaEstimate(best, grid, density, doubled, refined, warning)


def tau_transport(homotopy: Homotopy, alpha: DiscretePath, samples: int | None = None) -> DiscretePath:
    """Concatenate ``alpha`` with the track of its start point; lands in the space of ``f_1``."""
    trk = track(homotopy, alpha.start, samples).path
    f1 = homotopy.at(1.0)
    out = concatenate(alpha, trk, fmap=f1)
    if out.constraint_defect() > 1e-8:
        raise AssertionError("transported path violates the endpoint constraint")
    return out


@dataclass
class Branch:
    start: TranslatedPointRecord
    trace: list[tuple[float, float]] = field(default_factory=list)
    end: TranslatedPointRecord | None = None
    lost_at: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "start": self.start.to_dict(),
            "end": None if self.end is None else self.end.to_dict(),
            "trace": [[s, t] for s, t in self.trace],
            "lost_at": self.lost_at,
            "flags": list(self.flags),
        }


def continue_branch(homotopy: Homotopy, rec: TranslatedPointRecord, steps: int = 20,
                    options: SolverOptions | None = None) -> Branch:
    """Natural-parameter continuation from ``s = 0`` to ``s = 1`` with step halving."""
    br = Branch(rec, [(0.0, rec.state.t)])
    state = rec.state
    s, ds = 0.0, 1.0 / steps
    current = rec
    while s < 1.0:
        nxt = min(1.0, s + ds)
        try:
            current = newton_solve(homotopy.at(nxt), state, options)
        except (ConvergenceError, CutLocusError) as exc:
            ds *= 0.5
            if ds < MIN_STEP - 1e-15:
                br.lost_at = s
                br.flags.append(f"lost:{getattr(exc, 'reason', 'error')}")
                return br
            continue
        s, state = nxt, current.state
        br.trace.append((s, state.t))
        ds = min(1.0 / steps, 2 * ds)
    br.end = current
    return br


def continue_solutions(homotopy: Homotopy, records, steps: int = 20, options: SolverOptions | None = None):
    """Continue every record; flags branches that end on top of each other."""
    branches = [continue_branch(homotopy, r, steps, options) for r in records]
    ends = [(i, b.end) for i, b in enumerate(branches) if b.end is not None]
    m = homotopy.manifold
    for a in range(len(ends)):
        for b in range(a + 1, len(ends)):
            ra, rb = ends[a][1], ends[b][1]
            if abs(ra.state.t - rb.state.t) < MERGE_TOL and \
                    sm_distance(m, ra.state.x, ra.state.v, rb.state.x, rb.state.v) < MERGE_TOL:
                branches[ends[a][0]].flags.append(f"merged-with:{ends[b][0]}")
                branches[ends[b][0]].flags.append(f"merged-with:{ends[a][0]}")
    return branches


def geodesic_path(homotopy: Homotopy, state: ShootingState, count: int = 64) -> DiscretePath:
    """Path of a record of ``f_0`` as an element of its constrained path space."""
    return DiscretePath.from_geodesic(homotopy.manifold, state, homotopy.at(0.0), count)


def round_trip(homotopy: Homotopy, alpha: DiscretePath) -> tuple[DiscretePath, DiscretePath]:
    fwd = tau_transport(homotopy, alpha)
    return fwd, tau_transport(homotopy.reversed(), fwd)


def shift_bound_slack(homotopy: Homotopy, alpha: DiscretePath, delta_value: float) -> float:
    """``shift(alpha) + delta - shift(tau alpha)``; nonnegative when the bound holds."""
    return shift(alpha) + delta_value - shift(tau_transport(homotopy, alpha))

