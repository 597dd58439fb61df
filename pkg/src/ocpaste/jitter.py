"""Per-instance appearance and geometry jitter.

Each parameter is gated by its own application probability and, when it
fires, drawn uniformly from its interval. Color operations use statistics
from the masked region only, so the surrounding crop background cannot
drag the means around. All pixel math runs in float64 and is clamped back
to [0, 255] at the end, so identity parameters reproduce the input
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .masks import affine_patch

# ITU-R 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ParamRange:
    """Uniform interval plus the probability that the draw happens at all."""

    lo: float
    hi: float
    p: float

    def validate(self, name: str, positive: bool = True) -> None:
        if self.lo > self.hi:
            raise ConfigError(f"jitter.{name}: interval [{self.lo}, {self.hi}] is inverted")
        if positive and self.lo <= 0:
            raise ConfigError(f"jitter.{name}: factors must stay positive, lo={self.lo}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"jitter.{name}: probability {self.p} outside [0, 1]")


@dataclass(frozen=True)
class JitterParams:
    """Concrete factors for one candidate; defaults are the identity."""

    saturation: float = 1.0
    contrast: float = 1.0
    brightness: float = 1.0
    sharpness: float = 1.0
    scale: float = 1.0
    rotation: float = 0.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class JitterRanges:
    saturation: ParamRange = field(default_factory=lambda: ParamRange(0.7, 1.3, 0.5))
    contrast: ParamRange = field(default_factory=lambda: ParamRange(0.7, 1.3, 0.5))
    brightness: ParamRange = field(default_factory=lambda: ParamRange(0.7, 1.3, 0.5))
    sharpness: ParamRange = field(default_factory=lambda: ParamRange(0.7, 1.3, 0.5))
    scale: ParamRange = field(default_factory=lambda: ParamRange(0.7, 1.3, 0.5))
    rotation: ParamRange = field(default_factory=lambda: ParamRange(-15.0, 15.0, 0.3))

    def validate(self) -> None:
        for name in ("saturation", "contrast", "brightness", "sharpness", "scale"):
            getattr(self, name).validate(name)
        self.rotation.validate("rotation", positive=False)
        if self.rotation.lo < -180.0 or self.rotation.hi > 180.0:
            raise ConfigError(
                f"jitter.rotation: degrees must lie in [-180, 180], "
                f"got [{self.rotation.lo}, {self.rotation.hi}]"
            )


def disabled_jitter() -> JitterRanges:
    """Ranges with every application probability at zero."""
    return JitterRanges(
        saturation=ParamRange(1.0, 1.0, 0.0),
        contrast=ParamRange(1.0, 1.0, 0.0),
        brightness=ParamRange(1.0, 1.0, 0.0),
        sharpness=ParamRange(1.0, 1.0, 0.0),
        scale=ParamRange(1.0, 1.0, 0.0),
        rotation=ParamRange(0.0, 0.0, 0.0),
    )


def sample_jitter(rng: np.random.Generator, ranges: JitterRanges) -> JitterParams:
    """Draw one parameter set; each field gates then samples independently.

    Draw order is fixed (saturation, contrast, brightness, sharpness, scale,
    rotation) so a given rng stream always yields the same parameters.
    """
    values = {}
    for name in ("saturation", "contrast", "brightness", "sharpness", "scale", "rotation"):
        r: ParamRange = getattr(ranges, name)
        identity = 0.0 if name == "rotation" else 1.0
        if rng.random() < r.p:
            values[name] = float(rng.uniform(r.lo, r.hi))
        else:
            values[name] = identity
    return JitterParams(**values)


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    if mask.any():
        return float(values[mask].mean())
    return float(values.mean())


def apply_color_jitter(
    patch: np.ndarray, mask: np.ndarray, params: JitterParams
) -> np.ndarray:
    """Apply saturation, contrast, brightness and sharpness, in that order.

    saturation: per-pixel shift toward/away from luma; contrast: shift
    toward/away from the masked-region mean luma; brightness: channel
    scaling; sharpness: shift toward (factor < 1) or away from (factor > 1)
    a 3x3 box-smoothed copy.
    """
    out = patch.astype(np.float64)

    if params.saturation != 1.0:
        luma = out @ _LUMA
        out = luma[..., None] + (out - luma[..., None]) * params.saturation

    if params.contrast != 1.0:
        mean = _masked_mean(out @ _LUMA, mask)
        out = mean + (out - mean) * params.contrast

    if params.brightness != 1.0:
        out = out * params.brightness

    if params.sharpness != 1.0:
        padded = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
        smooth = np.zeros_like(out)
        for dy in range(3):
            for dx in range(3):
                smooth += padded[dy : dy + out.shape[0], dx : dx + out.shape[1]]
        smooth /= 9.0
        out = smooth + (out - smooth) * params.sharpness

    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def apply_geometric_jitter(
    patch: np.ndarray, mask: np.ndarray, params: JitterParams
) -> "tuple[np.ndarray, np.ndarray] | None":
    """Scale/rotate via the shared affine resampler; None when the mask
    degenerates to nothing."""
    if params.scale == 1.0 and params.rotation == 0.0:
        return patch, mask
    return affine_patch(patch, mask, params.scale, params.rotation)
