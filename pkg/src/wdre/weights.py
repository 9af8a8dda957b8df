"""Strictly positive sample weights that damp far-away points.

Two families are supported: a constant weight (plain, non-robust fitting)
and a quartic-decay weight a * exp(-||x||_4^4 / c). The fourth-power decay
dominates both the quadratic features and exp(theta' h(x)) in the tails,
which is what keeps weighted fitting finite and outlier-insensitive.

All downstream code consumes log weights rather than weights: at a point
like 100 * ones(m) the log weight is an unremarkable -5e6 while the weight
itself underflows to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["WeightFn", "WeightConfig", "weight_eval", "log_weight_eval", "log_weights"]

KINDS = ("constant", "quartic-decay")


@dataclass(frozen=True)
class WeightFn:
    """Weight function w(x), strictly positive and bounded by its amplitude."""

    kind: str
    scale: float | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}, expected one of {KINDS}")
        if not (math.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError(f"amplitude must be a positive finite real, got {self.amplitude!r}")
        if self.kind == "quartic-decay":
            if self.scale is None or not (math.isfinite(self.scale) and self.scale > 0):
                raise ValueError(f"quartic-decay needs a positive finite scale, got {self.scale!r}")
        elif self.scale is not None:
            raise ValueError("constant weight takes no scale")

    @classmethod
    def constant(cls, amplitude: float = 1.0) -> "WeightFn":
        return cls("constant", None, amplitude)

    @classmethod
    def quartic_decay(cls, scale: float, amplitude: float = 1.0) -> "WeightFn":
        return cls("quartic-decay", float(scale), amplitude)

    @classmethod
    def quartic_for_dim(cls, m: int, scale_per_dim: float = 20.0, amplitude: float = 1.0) -> "WeightFn":
        """Quartic decay with the dimension-scaled width c = scale_per_dim * m."""
        return cls.quartic_decay(scale_per_dim * m, amplitude)

    def to_config(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "amplitude": self.amplitude}

    @classmethod
    def from_config(cls, cfg: dict) -> "WeightFn":
        known = {"kind", "scale", "amplitude"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown weight keys: {sorted(unknown)}")
        return cls(cfg.get("kind", "constant"), cfg.get("scale"), cfg.get("amplitude", 1.0))


@dataclass(frozen=True)
class WeightConfig:
    """Weight specification whose width may be tied to the input dimension.

    Exactly one of `scale` (absolute width c) and `scale_per_dim`
    (c = scale_per_dim * m, resolved per dataset) applies to quartic decay.
    """

    kind: str = "quartic-decay"
    scale: float | None = None
    scale_per_dim: float | None = 20.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == "quartic-decay" and self.scale is not None and self.scale_per_dim is not None:
            raise ValueError("give either scale or scale_per_dim, not both")
        if self.kind == "quartic-decay" and self.scale is None and self.scale_per_dim is None:
            raise ValueError("quartic-decay needs scale or scale_per_dim")

    def resolve(self, m: int) -> WeightFn:
        if self.kind == "constant":
            return WeightFn.constant(self.amplitude)
        scale = self.scale if self.scale is not None else self.scale_per_dim * m
        return WeightFn.quartic_decay(scale, self.amplitude)

    def to_config(self) -> dict:
        out = {"kind": self.kind, "amplitude": self.amplitude}
        if self.kind == "quartic-decay":
            if self.scale is not None:
                out["scale"] = self.scale
            else:
                out["scale_per_dim"] = self.scale_per_dim
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "WeightConfig":
        known = {"kind", "scale", "scale_per_dim", "amplitude"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown weight keys: {sorted(unknown)}")
        kind = cfg.get("kind", "quartic-decay")
        scale = cfg.get("scale")
        per_dim = cfg.get("scale_per_dim")
        if kind == "quartic-decay" and scale is None and per_dim is None:
            per_dim = 20.0
        return cls(kind, scale, per_dim, cfg.get("amplitude", 1.0))


def _validated(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("weight input must be finite")
    return x


def log_weight_eval(w: WeightFn, x) -> float:
    """log w(x), computed without exponentiating.

    Exact wherever the direct evaluation would underflow: for quartic decay
    this is log(a) - ||x||_4^4 / c whatever the magnitude of x.
    """
    x = _validated(x)
    if w.kind == "constant":
        return math.log(w.amplitude)
    with np.errstate(over="ignore"):
        quartic = float(np.sum(x**4))
    return math.log(w.amplitude) - quartic / w.scale


def weight_eval(w: WeightFn, x) -> float:
    """w(x) in (0, amplitude]; underflows to 0.0 far out, use log_weight_eval there."""
    lw = log_weight_eval(w, x)
    with np.errstate(over="ignore"):
        return float(np.exp(lw))


def log_weights(w: WeightFn, X) -> np.ndarray:
    """Per-row log w over an (n, m) sample matrix."""
    X = _validated(X)
    if X.ndim != 2:
        raise ValueError(f"expected an (n, m) matrix, got shape {X.shape}")
    if w.kind == "constant":
        return np.full(X.shape[0], math.log(w.amplitude))
    with np.errstate(over="ignore"):
        quartic = (X**4).sum(axis=1)
    return math.log(w.amplitude) - quartic / w.scale
