"""Solver state and result records, with lossless JSON round-tripping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .geometry import GeodesicArc, Manifold


@dataclass(frozen=True)
class ShootingState:
    x: np.ndarray
    v: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "t", float(self.t))

    @property
    def velocity(self) -> np.ndarray:
        return self.t * self.v

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "v": self.v.tolist(), "t": self.t}

    @classmethod
    def from_dict(cls, data: dict) -> "ShootingState":
        return cls(data["x"], data["v"], data["t"])


@dataclass
class TranslatedPointRecord:
    state: ShootingState
    residual_norm: float
    geodesic: GeodesicArc | None = None
    morse_index: int | str = "unknown"
    kernel_dim: int | None = None
    nondegenerate: bool | None = None
    borderline: bool = False
    family_id: int | None = None
    flags: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def t(self) -> float:
        return self.state.t

    def arc(self, manifold: Manifold) -> GeodesicArc:
        if self.geodesic is None:
            self.geodesic = manifold.geodesic(self.state.x, self.state.velocity)
        return self.geodesic

    def with_classification(self, **kw) -> "TranslatedPointRecord":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = {
            "state": self.state.to_dict(),
            "residual_norm": float(self.residual_norm),
            "morse_index": self.morse_index,
            "kernel_dim": self.kernel_dim,
            "nondegenerate": self.nondegenerate,
            "borderline": self.borderline,
            "family_id": self.family_id,
            "flags": list(self.flags),
        }
        if self.extra:
            out["extra"] = _plain(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TranslatedPointRecord":
        return cls(
            state=ShootingState.from_dict(data["state"]),
            residual_norm=float(data["residual_norm"]),
            morse_index=data.get("morse_index", "unknown"),
            kernel_dim=data.get("kernel_dim"),
            nondegenerate=data.get("nondegenerate"),
            borderline=bool(data.get("borderline", False)),
            family_id=data.get("family_id"),
            flags=list(data.get("flags", [])),
            extra=dict(data.get("extra", {})),
        )


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
