"""Augmentation configuration: JSON schema, validation and named presets.

One schema, one validator: the CLI, the library entry points and the
dataloader bindings all funnel configuration through :func:`load_config`,
so a bad value produces the same message everywhere.

JSON layout (all keys optional, defaults shown):

    {
      "p_cp": 0.8,
      "n_basket": 3,
      "r_paste": [1, 3],
      "placement": "targeted",            // or "random"
      "targeted_expand": 0.3,
      "min_size_ratio": 0.03,
      "scale_aware": {"enabled": false, "jitter": [0.9, 1.1]},
      "blend": {"mode": "off"},           // {"mode":"fixed","kernel":5,"sigma":2.0}
                                          // {"mode":"random","kernel":[3,9],"sigma":[0.5,3.0]}
      "jitter": {"saturation": {"range": [0.7, 1.3], "p": 0.5}, ...,
                 "rotation": {"range": [-15, 15], "p": 0.3}},
      "visibility_threshold": 0.10,
      "min_visible_px": 16,
      "paste_category_ids": [1],
      "seed": 0
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .jitter import JitterRanges, ParamRange, disabled_jitter

_JITTER_FIELDS = ("saturation", "contrast", "brightness", "sharpness", "scale", "rotation")


@dataclass(frozen=True)
class BlendSpec:
    """Alpha-matte blur on pasting masks: off, fixed params or per-paste random."""

    mode: str = "off"  # off | fixed | random
    kernel: int = 5
    sigma: float = 2.0
    kernel_interval: tuple[int, int] = (3, 9)
    sigma_interval: tuple[float, float] = (0.5, 3.0)

    def validate(self) -> None:
        if self.mode not in ("off", "fixed", "random"):
            raise ConfigError(f"blend.mode must be off, fixed or random, got {self.mode!r}")
        if self.mode == "fixed":
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ConfigError(f"blend.kernel must be odd and >= 1, got {self.kernel}")
            if self.sigma <= 0:
                raise ConfigError(f"blend.sigma must be positive, got {self.sigma}")
        if self.mode == "random":
            lo, hi = self.kernel_interval
            if lo > hi or lo < 1:
                raise ConfigError(f"blend.kernel interval [{lo}, {hi}] is invalid")
            if not any(k % 2 == 1 for k in range(lo, hi + 1)):
                raise ConfigError(f"blend.kernel interval [{lo}, {hi}] contains no odd size")
            slo, shi = self.sigma_interval
            if slo > shi or slo <= 0:
                raise ConfigError(f"blend.sigma interval [{slo}, {shi}] is invalid")


@dataclass(frozen=True)
class OcpConfig:
    """Every knob of the augmentation engine. Defaults are the final recipe:
    targeted placement with jitter and the minimum-size filter."""

    p_cp: float = 0.8
    n_basket: int = 3
    r_paste: tuple[int, int] = (1, 3)
    placement: str = "targeted"  # random | targeted
    targeted_expand: float = 0.3
    min_size_ratio: float = 0.03
    scale_aware: bool = False
    scale_aware_jitter: tuple[float, float] = (0.9, 1.1)
    blend: BlendSpec = field(default_factory=BlendSpec)
    jitter: JitterRanges = field(default_factory=JitterRanges)
    visibility_threshold: float = 0.10
    min_visible_px: int = 16
    paste_category_ids: tuple[int, ...] = (1,)
    seed: int = 0

    def validate(self) -> "OcpConfig":
        if not 0.0 <= self.p_cp <= 1.0:
            raise ConfigError(f"p_cp must lie in [0, 1], got {self.p_cp}")
        if self.n_basket < 1:
            raise ConfigError(f"n_basket must be >= 1, got {self.n_basket}")
        lo, hi = self.r_paste
        if lo < 0 or lo > hi:
            raise ConfigError(f"r_paste [{lo}, {hi}] must satisfy 0 <= lo <= hi")
        if self.placement not in ("random", "targeted"):
            raise ConfigError(f"placement must be random or targeted, got {self.placement!r}")
        if self.targeted_expand < 0:
            raise ConfigError(f"targeted_expand must be >= 0, got {self.targeted_expand}")
        if not 0.0 <= self.min_size_ratio < 1.0:
            raise ConfigError(f"min_size_ratio must lie in [0, 1), got {self.min_size_ratio}")
        slo, shi = self.scale_aware_jitter
        if slo > shi or slo <= 0:
            raise ConfigError(f"scale_aware.jitter interval [{slo}, {shi}] is invalid")
        self.blend.validate()
        self.jitter.validate()
        if not 0.0 < self.visibility_threshold <= 1.0:
            raise ConfigError(
                f"visibility_threshold must lie in (0, 1], got {self.visibility_threshold}"
            )
        if self.min_visible_px < 0:
            raise ConfigError(f"min_visible_px must be >= 0, got {self.min_visible_px}")
        if not self.paste_category_ids:
            raise ConfigError("paste_category_ids must name at least one category")
        return self

    def to_dict(self) -> dict:
        blend: dict = {"mode": self.blend.mode}
        if self.blend.mode == "fixed":
            blend.update(kernel=self.blend.kernel, sigma=self.blend.sigma)
        elif self.blend.mode == "random":
            blend.update(
                kernel=list(self.blend.kernel_interval),
                sigma=list(self.blend.sigma_interval),
            )
        return {
            "p_cp": self.p_cp,
            "n_basket": self.n_basket,
            "r_paste": list(self.r_paste),
            "placement": self.placement,
            "targeted_expand": self.targeted_expand,
            "min_size_ratio": self.min_size_ratio,
            "scale_aware": {"enabled": self.scale_aware, "jitter": list(self.scale_aware_jitter)},
            "blend": blend,
            "jitter": {
                name: {
                    "range": [getattr(self.jitter, name).lo, getattr(self.jitter, name).hi],
                    "p": getattr(self.jitter, name).p,
                }
                for name in _JITTER_FIELDS
            },
            "visibility_threshold": self.visibility_threshold,
            "min_visible_px": self.min_visible_px,
            "paste_category_ids": list(self.paste_category_ids),
            "seed": self.seed,
        }


def _nested(value, key: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be an object, got {type(value).__name__}")
    return value


def _pair(value, key: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{key} must be a two-element [lo, hi] array, got {value!r}")
    return tuple(value)


def _parse_blend(value) -> BlendSpec:
    v = _nested(value, "blend")
    unknown = set(v) - {"mode", "kernel", "sigma"}
    if unknown:
        raise ConfigError(f"blend: unknown key {sorted(unknown)[0]!r}")
    mode = v.get("mode", "off")
    if mode == "fixed":
        return BlendSpec(mode="fixed",
                         kernel=int(v.get("kernel", 5)),
                         sigma=float(v.get("sigma", 2.0)))
    if mode == "random":
        defaults = BlendSpec()
        kernel = _pair(v["kernel"], "blend.kernel") if "kernel" in v else defaults.kernel_interval
        sigma = _pair(v["sigma"], "blend.sigma") if "sigma" in v else defaults.sigma_interval
        return BlendSpec(
            mode="random",
            kernel_interval=(int(kernel[0]), int(kernel[1])),
            sigma_interval=(float(sigma[0]), float(sigma[1])),
        )
    return BlendSpec(mode=str(mode))


def _parse_jitter(value) -> JitterRanges:
    v = _nested(value, "jitter")
    unknown = set(v) - set(_JITTER_FIELDS)
    if unknown:
        raise ConfigError(f"jitter: unknown key {sorted(unknown)[0]!r}")
    base = JitterRanges()
    overrides = {}
    for name in _JITTER_FIELDS:
        if name not in v:
            continue
        entry = _nested(v[name], f"jitter.{name}")
        unknown = set(entry) - {"range", "p"}
        if unknown:
            raise ConfigError(f"jitter.{name}: unknown key {sorted(unknown)[0]!r}")
        default: ParamRange = getattr(base, name)
        lo, hi = _pair(entry["range"], f"jitter.{name}.range") if "range" in entry else (default.lo, default.hi)
        overrides[name] = ParamRange(float(lo), float(hi), float(entry.get("p", default.p)))
    return replace(base, **overrides)


def config_from_dict(doc: dict) -> OcpConfig:
    """Build and validate a config from a plain JSON-shaped dict."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config must be a JSON object, got {type(doc).__name__}")
    known = {
        "p_cp", "n_basket", "r_paste", "placement", "targeted_expand",
        "min_size_ratio", "scale_aware", "blend", "jitter",
        "visibility_threshold", "min_visible_px", "paste_category_ids", "seed",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    defaults = OcpConfig()
    kwargs: dict = {}
    if "p_cp" in doc:
        kwargs["p_cp"] = float(doc["p_cp"])
    if "n_basket" in doc:
        kwargs["n_basket"] = int(doc["n_basket"])
    if "r_paste" in doc:
        lo, hi = _pair(doc["r_paste"], "r_paste")
        kwargs["r_paste"] = (int(lo), int(hi))
    if "placement" in doc:
        kwargs["placement"] = str(doc["placement"])
    if "targeted_expand" in doc:
        kwargs["targeted_expand"] = float(doc["targeted_expand"])
    if "min_size_ratio" in doc:
        kwargs["min_size_ratio"] = float(doc["min_size_ratio"])
    if "scale_aware" in doc:
        v = _nested(doc["scale_aware"], "scale_aware")
        unknown = set(v) - {"enabled", "jitter"}
        if unknown:
            raise ConfigError(f"scale_aware: unknown key {sorted(unknown)[0]!r}")
        kwargs["scale_aware"] = bool(v.get("enabled", False))
        if "jitter" in v:
            lo, hi = _pair(v["jitter"], "scale_aware.jitter")
            kwargs["scale_aware_jitter"] = (float(lo), float(hi))
    if "blend" in doc:
        kwargs["blend"] = _parse_blend(doc["blend"])
    if "jitter" in doc:
        kwargs["jitter"] = _parse_jitter(doc["jitter"])
    if "visibility_threshold" in doc:
        kwargs["visibility_threshold"] = float(doc["visibility_threshold"])
    if "min_visible_px" in doc:
        kwargs["min_visible_px"] = int(doc["min_visible_px"])
    if "paste_category_ids" in doc:
        ids = doc["paste_category_ids"]
        if not isinstance(ids, (list, tuple)):
            raise ConfigError(f"paste_category_ids must be an array, got {ids!r}")
        kwargs["paste_category_ids"] = tuple(int(i) for i in ids)
    if "seed" in doc:
        kwargs["seed"] = int(doc["seed"])
    return replace(defaults, **kwargs).validate()


def load_config(source: "str | dict | OcpConfig | None") -> OcpConfig:
    """Accept a JSON string, a parsed dict, a ready config or None (defaults)."""
    if source is None:
        return OcpConfig().validate()
    if isinstance(source, OcpConfig):
        return source.validate()
    if isinstance(source, dict):
        return config_from_dict(source)
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON at byte {e.pos}: {e.msg}") from e
    return config_from_dict(doc)


# ------------------------------------------------------------------ presets

def _presets() -> dict[str, OcpConfig]:
    off = disabled_jitter()
    basic = OcpConfig(
        placement="random", r_paste=(4, 6), n_basket=6,
        min_size_ratio=0.0, jitter=off,
    )
    return {
        # plain copy & paste at its best paste-count range
        "basic": basic,
        # + minimum pasting size
        "minsize": replace(basic, min_size_ratio=0.03),
        # + paste sizes matched to the destination's instances
        "scale-aware": replace(basic, min_size_ratio=0.03, scale_aware=True),
        # + fixed Gaussian edge blending
        "blend-fixed": replace(
            basic, min_size_ratio=0.03,
            blend=BlendSpec(mode="fixed", kernel=5, sigma=2.0),
        ),
        # + per-paste random Gaussian edge blending
        "blend-random": replace(
            basic, min_size_ratio=0.03,
            blend=BlendSpec(mode="random", kernel_interval=(3, 9), sigma_interval=(0.5, 3.0)),
        ),
        # place next to an existing instance; fewer, deliberate pastes
        "targeted": OcpConfig(
            placement="targeted", r_paste=(1, 3), n_basket=3,
            min_size_ratio=0.0, jitter=off,
        ),
        # the full recipe: targeted + jitter + minimum size
        "ocp-final": OcpConfig(),
    }


PRESETS: dict[str, OcpConfig] = _presets()


def preset(name: str) -> OcpConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
