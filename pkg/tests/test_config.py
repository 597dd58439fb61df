import json

import pytest

from ocpaste.config import (
    PRESETS,
    BlendSpec,
    OcpConfig,
    config_from_dict,
    load_config,
    preset,
)
from ocpaste.errors import ConfigError


def test_defaults_are_the_final_recipe():
    cfg = OcpConfig()
    assert cfg.p_cp == 0.8
    assert cfg.n_basket == 3
    assert cfg.r_paste == (1, 3)
    assert cfg.placement == "targeted"
    assert cfg.targeted_expand == 0.3
    assert cfg.min_size_ratio == 0.03
    assert cfg.scale_aware is False
    assert cfg.blend.mode == "off"
    assert cfg.visibility_threshold == 0.10
    assert cfg.min_visible_px == 16
    assert cfg.jitter.saturation.lo == 0.7 and cfg.jitter.saturation.p == 0.5
    assert cfg.jitter.rotation.hi == 15.0 and cfg.jitter.rotation.p == 0.3


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_to_dict_round_trips(name):
    cfg = PRESETS[name]
    assert config_from_dict(cfg.to_dict()) == cfg


def test_load_config_accepts_all_source_forms():
    assert load_config(None) == OcpConfig()
    assert load_config({}) == OcpConfig()
    assert load_config("{}") == OcpConfig()
    cfg = OcpConfig(p_cp=0.5)
    assert load_config(cfg) is cfg
    assert load_config(json.dumps({"p_cp": 0.5})) == cfg


def test_partial_dict_overrides_only_named_keys():
    cfg = load_config({"n_basket": 9, "blend": {"mode": "fixed", "kernel": 7}})
    assert cfg.n_basket == 9
    assert cfg.blend == BlendSpec(mode="fixed", kernel=7, sigma=2.0)
    assert cfg.p_cp == OcpConfig().p_cp


def test_invalid_json_reports_byte_offset():
    with pytest.raises(ConfigError, match=r"not valid JSON at byte \d+"):
        load_config('{"p_cp": }')


@pytest.mark.parametrize("doc,fragment", [
    ({"p_cpp": 1}, "unknown config key 'p_cpp'"),
    ({"blend": {"mode": "off", "radius": 3}}, "blend: unknown key 'radius'"),
    ({"jitter": {"hue": {"range": [0, 1]}}}, "jitter: unknown key 'hue'"),
    ({"jitter": {"scale": {"range": [0.5, 2], "prob": 1}}},
     "jitter.scale: unknown key 'prob'"),
    ({"scale_aware": {"on": True}}, "scale_aware: unknown key 'on'"),
])
def test_unknown_keys_rejected_everywhere(doc, fragment):
    with pytest.raises(ConfigError) as e:
        config_from_dict(doc)
    assert fragment in str(e.value)


@pytest.mark.parametrize("doc,fragment", [
    ({"p_cp": 1.5}, "p_cp"),
    ({"n_basket": 0}, "n_basket"),
    ({"r_paste": [3, 1]}, "r_paste"),
    ({"r_paste": [2]}, "two-element"),
    ({"placement": "corner"}, "placement"),
    ({"targeted_expand": -0.1}, "targeted_expand"),
    ({"min_size_ratio": 1.0}, "min_size_ratio"),
    ({"visibility_threshold": 0.0}, "visibility_threshold"),
    ({"min_visible_px": -1}, "min_visible_px"),
    ({"blend": {"mode": "sometimes"}}, "blend.mode"),
    ({"blend": {"mode": "fixed", "kernel": 4}}, "odd"),
    ({"blend": {"mode": "fixed", "sigma": 0}}, "sigma"),
    ({"blend": {"mode": "random", "kernel": [4, 4]}}, "no odd size"),
    ({"blend": {"mode": "random", "sigma": [3, 1]}}, "sigma interval"),
    ({"scale_aware": {"enabled": True, "jitter": [0, 1.1]}}, "scale_aware.jitter"),
    ({"jitter": {"rotation": {"range": [-200, 10]}}}, "rotation"),
    ({"jitter": {"scale": {"range": [-0.5, 1.2]}}}, "scale"),
    ({"paste_category_ids": []}, "paste_category_ids"),
])
def test_validation_messages(doc, fragment):
    with pytest.raises(ConfigError) as e:
        config_from_dict(doc)
    assert fragment in str(e.value)


def test_zero_paste_range_is_legal():
    assert config_from_dict({"r_paste": [0, 0]}).r_paste == (0, 0)


def test_preset_names_and_shapes():
    assert set(PRESETS) == {"basic", "minsize", "scale-aware", "blend-fixed",
                            "blend-random", "targeted", "ocp-final"}
    basic = preset("basic")
    assert basic.placement == "random"
    assert basic.r_paste == (4, 6) and basic.n_basket == 6
    assert basic.min_size_ratio == 0.0
    assert all(getattr(basic.jitter, f).p == 0.0
               for f in ("saturation", "contrast", "brightness", "sharpness",
                         "scale", "rotation"))
    assert preset("minsize") == preset("basic").__class__(
        **{**basic.__dict__, "min_size_ratio": 0.03})
    assert preset("scale-aware").scale_aware is True
    assert preset("blend-fixed").blend.mode == "fixed"
    assert preset("blend-random").blend.mode == "random"
    targeted = preset("targeted")
    assert targeted.placement == "targeted" and targeted.r_paste == (1, 3)
    assert preset("ocp-final") == OcpConfig()
    for cfg in PRESETS.values():
        cfg.validate()


def test_unknown_preset_lists_choices():
    with pytest.raises(ConfigError, match="available: basic, blend-fixed"):
        preset("nope")
