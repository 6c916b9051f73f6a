"""Audits of shift spectra on Zoll and flat models, plus report serialisation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .continuation import DeltaEstimate, delta
from .errors import ConfigError, ConvergenceError, CutLocusError
from .geometry import Ellipsoid, FlatTorus, Manifold, RoundSphere, make_manifold
from .records import ShootingState, TranslatedPointRecord
from .smoothmap import Homotopy, SmoothMap, make_homotopy, make_map
from .solver import MERGE_TOL, ScanOptions, SolverOptions, families, newton_solve, sm_distance, window_scan

log = logging.getLogger(__name__)

TOWER_TOL = 1e-6
LOCALIZATION_TOL = 1e-4
LATTICE_TOL = 0.2
DEFAULT_TORUS_CLASSES = ((1, 0), (0, 1), (1, 1), (2, 1))

PASS, FAIL, NA, VIOLATED = "pass", "fail", "not-applicable", "hypothesis-violated"


# -- configuration -----------------------------------------------------------------


def default_betti_sum(m: Manifold) -> int | None:
    """Total rank of the integral homology of the unit tangent bundle.

    ``S(S^n)`` is the Stiefel manifold ``V_2(R^(n+1))``: rationally ``S^(2n-1)``
    for even ``n`` (ranks sum to 2) and ``S^n x S^(n-1)`` for odd ``n`` (sum 4).
    ``S(T^n) = T^n x S^(n-1)`` has ranks summing to ``2^(n+1)``.
    """
    if isinstance(m, (RoundSphere, Ellipsoid)):
        return 2 if m.dim % 2 == 0 else 4
    if isinstance(m, FlatTorus):
        return 2 ** (m.dim + 1)
    return None


def default_cup_length(m: Manifold) -> int | None:
    if isinstance(m, (RoundSphere, Ellipsoid)):
        return 1 if m.dim % 2 == 0 else 2
    if isinstance(m, FlatTorus):
        return 2 * m.dim - 1
    return None


_SOLVER_KEYS = {"tol", "max_iter", "max_halvings", "damping", "fd_step", "t_min", "steps",
                "min_decrease", "patience"}
_SCAN_KEYS = {"points", "directions", "shifts", "max_seeds", "separation"}


@dataclass
class AuditConfig:
    manifold: Manifold
    fmap: SmoothMap
    homotopy: Homotopy | None
    window: tuple[float, float]
    zoll_length: float | None
    betti_sum: int | None
    cup_length: int | None
    k_max: int = 3
    solver: SolverOptions = field(default_factory=SolverOptions)
    scan: ScanOptions = field(default_factory=ScanOptions)
    delta_density: int = 20
    torus_classes: tuple = DEFAULT_TORUS_CLASSES
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, seed: int | None = None, threads: int | None = None,
                  window=None) -> "AuditConfig":
        if "manifold" not in data:
            raise ConfigError("config needs a 'manifold' entry")
        try:
            m = make_manifold(data["manifold"])
            hom = make_homotopy(m, data["homotopy"]) if data.get("homotopy") else None
            if data.get("map"):
                fmap = make_map(m, data["map"])
            elif hom is not None:
                fmap = hom.at(1.0)
            else:
                raise ConfigError("config needs a 'map' or a 'homotopy'")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid model config: {exc}") from exc
        ell = data.get("zoll_length", m.zoll_length)
        win = window if window is not None else data.get("window")
        if win is None:
            if ell is None:
                raise ConfigError("config needs a 'window' on non-Zoll models")
            win = (ell / 2, 3 * ell / 2)
        a, b = (float(w) for w in win)
        if not 0 <= a < b:
            raise ConfigError("window must satisfy 0 <= a < b")
        if ell is not None and ell <= 0:
            raise ConfigError("zoll_length must be positive")
        betti = data.get("betti_sum", default_betti_sum(m))
        if betti is not None and betti < 1:
            raise ConfigError("betti_sum must be at least 1")
        tol = data.get("tolerances", {})
        bad = set(tol.get("solver", {})) - _SOLVER_KEYS or set(tol.get("scan", {})) - _SCAN_KEYS
        if bad:
            raise ConfigError(f"unknown tolerance keys: {sorted(bad)}")
        scan = ScanOptions(**tol.get("scan", {}))
        scan.seed = int(seed if seed is not None else data.get("seed", 0))
        scan.threads = int(threads if threads is not None else data.get("threads", 1))
        classes = tuple(tuple(q) for q in data.get("torus_classes", DEFAULT_TORUS_CLASSES))
        return cls(m, fmap, hom, (a, b), ell, betti, data.get("cup_length", default_cup_length(m)),
                   int(data.get("k_max", 3)), SolverOptions(**tol.get("solver", {})), scan,
                   int(data.get("delta_density", 20)), classes, dict(data))

    def echo(self) -> dict:
        out = {
            "manifold": self.manifold.config,
            "map": self.fmap.config,
            "window": list(self.window),
            "zoll_length": self.zoll_length,
            "betti_sum": self.betti_sum,
            "cup_length": self.cup_length,
            "k_max": self.k_max,
            "seed": self.scan.seed,
        }
        if self.homotopy is not None:
            out["homotopy"] = self.homotopy.config
        return out


def load_config(path: str, **kw) -> AuditConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return AuditConfig.from_dict(data, **kw)


# -- verdicts ------------------------------------------------------------------------


@dataclass
class Verdict:
    name: str
    status: str
    details: dict[str, Any] = field(default_factory=dict)
    records: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in (PASS, NA)

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "details": _jsonable(self.details),
                "records": list(self.records)}


def tower_extend(fmap: SmoothMap, rec: TranslatedPointRecord, k: int, ell: float,
                 options: SolverOptions | None = None) -> TranslatedPointRecord:
    """Re-solve from ``(x, v, t + k ell)``; raises when the tower is not reproduced."""
    if k < 1:
        raise ValueError("k must be positive")
    s = rec.state
    out = newton_solve(fmap, ShootingState(s.x, s.v, s.t + k * ell), options)
    tol = (options or SolverOptions()).tol
    if out.residual_norm >= tol:
        raise ConvergenceError("tower-residual")
    if abs(out.state.t - s.t - k * ell) >= TOWER_TOL:
        raise ConvergenceError("tower-shift", f"shift moved to {out.state.t}")
    return out


def _units(records):
    """Nondegenerate records individually, degenerate families as one unit each."""
    single, fams = [], []
    for fid, members in families(records).items():
        if len(members) == 1 and members[0].nondegenerate:
            single.append(members[0])
        else:
            fams.append((fid, members))
    return single, fams


def match_towers(base, shifted, ell: float, m: Manifold) -> tuple[bool, dict]:
    sb, fb = _units(base)
    ss, fs = _units(shifted)
    used = set()
    unmatched = 0
    for r in sb:
        hit = None
        for j, q in enumerate(ss):
            if j in used or abs(q.state.t - r.state.t - ell) >= MERGE_TOL:
                continue
            if sm_distance(m, r.state.x, r.state.v, q.state.x, q.state.v) < 10 * MERGE_TOL:
                hit = j
                break
        if hit is None:
            unmatched += 1
        else:
            used.add(hit)
    # sparse sampling can split one family into fragments, so families are
    # matched through their distinct shift levels
    lev_b = _levels(members[0].state.t + ell for _, members in fb)
    lev_s = _levels(members[0].state.t for _, members in fs)
    fam_ok = len(lev_b) == len(lev_s) and all(abs(a - b) < MERGE_TOL for a, b in zip(lev_b, lev_s))
    ok = unmatched == 0 and len(used) == len(ss) and fam_ok
    return ok, {"isolated_base": len(sb), "isolated_shifted": len(ss), "unmatched": unmatched,
                "families_base": len(fb), "families_shifted": len(fs),
                "family_levels_base": len(lev_b), "family_levels_shifted": len(lev_s)}


def _levels(values) -> list[float]:
    out: list[float] = []
    for v in sorted(values):
        if not out or v - out[-1] >= MERGE_TOL:
            out.append(v)
    return out


def audit_zoll_tower(cfg: AuditConfig, records, shifted=None) -> Verdict:
    ell = cfg.zoll_length
    if not ell:
        return Verdict("zoll-tower", NA, {"reason": "no zoll length configured"})
    failures = []
    worst = 0.0
    for i, r in enumerate(records):
        try:
            out = tower_extend(cfg.fmap, r, 1, ell, cfg.solver)
            worst = max(worst, abs(out.state.t - r.state.t - ell))
        except (ConvergenceError, CutLocusError) as exc:
            failures.append((i, getattr(exc, "reason", str(exc))))
    a, b = cfg.window
    if shifted is None:
        shifted = window_scan(cfg.fmap, (a + ell, b + ell), cfg.scan, cfg.solver)
    ok, info = match_towers(records, shifted, ell, cfg.manifold)
    details = {"tower_failures": len(failures), "max_shift_error": worst, **info}
    status = PASS if ok and not failures else FAIL
    return Verdict("zoll-tower", status, details, [i for i, _ in failures])


def audit_morse_count(records, betti_sum: int | None, zoll: bool = True) -> Verdict:
    if not zoll:
        return Verdict("morse-count", NA, {"reason": "model is not Zoll"})
    if betti_sum is None:
        return Verdict("morse-count", NA, {"reason": "no betti_sum configured"})
    bad = [i for i, r in enumerate(records) if not r.nondegenerate or r.borderline]
    if bad:
        return Verdict("morse-count", VIOLATED,
                       {"reason": "degenerate or borderline records present", "offending": len(bad),
                        "betti_sum": betti_sum}, bad)
    count = len({r.family_id for r in records})
    status = PASS if count >= betti_sum else FAIL
    return Verdict("morse-count", status, {"count": count, "betti_sum": betti_sum, "slack": count - betti_sum})


def audit_localization(records_by_k: dict[int, list], delta_value: float, ell: float | None,
                       k_max: int) -> Verdict:
    if not ell:
        return Verdict("localization", NA, {"reason": "no zoll length configured"})
    per_k = {}
    ok = True
    for k in range(1, k_max + 1):
        recs = records_by_k.get(k, [])
        dist = min((abs(r.state.t - k * ell) for r in recs), default=math.inf)
        bound = delta_value + LOCALIZATION_TOL
        per_k[str(k)] = {"closest": dist, "bound": bound, "slack": bound - dist}
        ok = ok and dist <= bound
    return Verdict("localization", PASS if ok else FAIL, {"delta": delta_value, "windows": per_k})


def audit_cup_length(records, cup_length: int | None, ell: float | None) -> Verdict:
    """Weak observable form: few distinct shifts mod ell force a degenerate family."""
    if not ell or cup_length is None:
        return Verdict("cup-length", NA, {"reason": "needs a zoll length and cup_length"})
    vals = sorted(r.state.t % ell for r in records)
    distinct = []
    for v in vals:
        if not distinct or v - distinct[-1] > MERGE_TOL:
            distinct.append(v)
    if len(distinct) > 1 and distinct[0] + ell - distinct[-1] <= MERGE_TOL:
        distinct.pop()
    has_family = any("degenerate-family" in r.flags for r in records)
    needs = len(distinct) < 1 + cup_length
    status = PASS if (not needs or has_family) else FAIL
    return Verdict("cup-length", status, {"distinct_shifts_mod_ell": len(distinct), "cup_length": cup_length,
                                          "degenerate_family_present": has_family})


def lattice_class(rec: TranslatedPointRecord, m: FlatTorus) -> tuple[int, ...]:
    return tuple(int(q) for q in np.round(rec.state.velocity / m.periods))


def audit_unbounded(cfg: AuditConfig, scans: list[list[TranslatedPointRecord]] | None = None) -> Verdict:
    a, b = cfg.window
    width = cfg.zoll_length or (b - a)
    if scans is None:
        scans = [window_scan(cfg.fmap, w, cfg.scan, cfg.solver) for w in unbounded_windows(width, cfg.k_max)]
    counts = [len(s) for s in scans]
    ok = all(c >= 1 for c in counts)
    details: dict[str, Any] = {"window_counts": counts, "width": width}
    m = cfg.manifold
    if isinstance(m, FlatTorus):
        recs = [r for s in scans for r in s]
        chosen = {}
        for q in cfg.torus_classes:
            target = float(np.linalg.norm(np.asarray(q, float) * m.periods))
            cands = [r.state.t for r in recs
                     if lattice_class(r, m) == tuple(q) and abs(r.state.t - target) <= LATTICE_TOL]
            chosen[str(list(q))] = {"target": target, "shift": min(cands) if cands else None}
        vals = [c["shift"] for c in chosen.values()]
        found = all(v is not None for v in vals)
        seq = sorted(vals) if found else []
        increasing = found and all(x < y for x, y in zip(seq, seq[1:]))
        details.update({"classes": chosen, "sequence": seq, "strictly_increasing": increasing})
        ok = ok and found and increasing
    return Verdict("unbounded", PASS if ok else FAIL, details)


# -- spectrum report -------------------------------------------------------------------


@dataclass
class SpectrumReport:
    window: tuple[float, float]
    records: list[TranslatedPointRecord]
    verdicts: list[Verdict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    delta: DeltaEstimate | None = None
    extra: dict = field(default_factory=dict)

    def shifts(self) -> list[dict]:
        out = []
        for fid, members in sorted(families(self.records).items(), key=lambda kv: (kv[1][0].state.t, kv[0])):
            head = members[0]
            out.append({
                "t": head.state.t,
                "family_id": fid,
                "multiplicity": len(members),
                "degenerate": any(not r.nondegenerate for r in members),
                "degenerate_family": "degenerate-family" in head.flags,
                "family_dim": head.extra.get("family_dim"),
            })
        return out

    def to_dict(self) -> dict:
        out = {
            "window": list(self.window),
            "shifts": self.shifts(),
            "records": [dict(r.to_dict(), id=i) for i, r in enumerate(self.records)],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "config": self.config,
        }
        if self.delta is not None:
            out["delta"] = self.delta.to_dict()
        if self.extra:
            out["extra"] = _jsonable(self.extra)
        return out

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def to_json(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip float repr, no NaN."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "v", "index", "kernel_dim", "family_id", "flags"])
    for r in records:
        w.writerow([repr(r.state.t), " ".join(repr(float(c)) for c in r.state.x),
                    " ".join(repr(float(c)) for c in r.state.v), r.morse_index,
                    "" if r.kernel_dim is None else r.kernel_dim,
                    "" if r.family_id is None else r.family_id, ";".join(r.flags)])
    return buf.getvalue()


def families_csv(report: SpectrumReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "family_id", "multiplicity", "degenerate", "degenerate_family", "family_dim"])
    for s in report.shifts():
        w.writerow([repr(s["t"]), s["family_id"], s["multiplicity"], s["degenerate"], s["degenerate_family"],
                    "" if s["family_dim"] is None else s["family_dim"]])
    return buf.getvalue()


def spectrum_svg(report: SpectrumReport, width: int = 640, height: int = 240) -> str:
    """Bar plot of the shift spectrum: one bar per family, height ~ log multiplicity."""
    a, b = report.window
    pad = 30
    bars = []
    for s in report.shifts():
        x = pad + (s["t"] - a) / (b - a) * (width - 2 * pad)
        h = (height - 2 * pad) * (0.3 + 0.7 * min(1.0, math.log10(s["multiplicity"] + 1) / 3))
        colour = "#c0392b" if s["degenerate"] else "#2c3e50"
        bars.append(f'<rect x="{x - 1.5:.2f}" y="{height - pad - h:.2f}" width="3" height="{h:.2f}" '
                    f'fill="{colour}"><title>t={s["t"]!r} n={s["multiplicity"]}</title></rect>')
    axis = (f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>'
            f'<text x="{pad}" y="{height - 8}" font-size="11">{a:.4g}</text>'
            f'<text x="{width - pad}" y="{height - 8}" font-size="11" text-anchor="end">{b:.4g}</text>')
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">{axis}{"".join(bars)}</svg>\n')


def report(spectrum: SpectrumReport, fmt: str = "json") -> str:
    if fmt == "json":
        return to_json(spectrum.to_dict())
    if fmt == "csv":
        return records_csv(spectrum.records)
    if fmt == "families-csv":
        return families_csv(spectrum)
    if fmt == "svg":
        return spectrum_svg(spectrum)
    raise ValueError(f"unknown report format {fmt!r}")


# -- orchestration --------------------------------------------------------------------


def unbounded_windows(width: float, k_max: int):
    return [(k * width, (k + 1) * width) for k in range(k_max)]


def localization_windows(ell: float, k_max: int):
    return {k: ((k - 0.5) * ell, (k + 0.5) * ell) for k in range(1, k_max + 1)}


def run_zoll_audit(cfg: AuditConfig) -> SpectrumReport:
    """Scan the configured window and run every applicable audit."""
    recs = window_scan(cfg.fmap, cfg.window, cfg.scan, cfg.solver)
    ell = cfg.zoll_length
    verdicts = [audit_zoll_tower(cfg, recs), audit_morse_count(recs, cfg.betti_sum, bool(ell)),
                audit_cup_length(recs, cfg.cup_length, ell)]
    est = None
    extra: dict[str, Any] = {}
    if cfg.homotopy is not None and ell:
        est = delta(cfg.homotopy, cfg.delta_density)
        by_k = {k: window_scan(cfg.fmap, w, cfg.scan, cfg.solver)
                for k, w in localization_windows(ell, cfg.k_max).items()}
        verdicts.append(audit_localization(by_k, est.value, ell, cfg.k_max))
        extra["delta_below_half_length"] = est.value < ell / 2
        extra["delta_note"] = "grid estimate of a supremum; not a certificate"
    elif ell:
        verdicts.append(Verdict("localization", NA, {"reason": "no homotopy configured"}))
    return SpectrumReport(cfg.window, recs, verdicts, cfg.echo(), est, extra)


def run_spectrum(cfg: AuditConfig) -> SpectrumReport:
    recs = window_scan(cfg.fmap, cfg.window, cfg.scan, cfg.solver)
    return SpectrumReport(cfg.window, recs, [], cfg.echo())
