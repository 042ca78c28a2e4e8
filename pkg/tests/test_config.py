import json

import numpy as np
import pytest
import yaml

from caplearn import config as C

# robot, [h, l_max], [t_land, t_lift], [t_x', t_y', kappa_x, kappa_y], layers, [k_eps, eta],
# [r_a, w_b, w_t, w_s, w_c], [xd_des, wz_des]
PARAMETER_TABLE = {
    "draco_walking": ([0.93, 0.7], [0.16, 0.16], [0.22, 0.22, -0.18, -0.18], [64, 64], [1e5, 0.8],
                      [5.0, 3.0, 3.0, 1.0, 1.0], [0.3, 0.0]),
    "atlas_walking": ([0.82, 0.55], [0.23, 0.23], [0.15, 0.15, -0.16, -0.16], [64, 64], [1e5, 0.8],
                      [5.0, 3.0, 3.0, 1.0, 1.0], [0.15, 0.0]),
    "atlas_turning": ([0.82, 0.55], [0.23, 0.23], [0.15, 0.15, -0.16, -0.16], [64, 64], [1e5, 0.8],
                      [5.0, 5.0, 5.0, 3.0, 1.0], [0.0, 0.09]),
}


def table_row(d: dict) -> tuple:
    return (
        [d["lipm"]["h"], d["lipm"]["l_max"]],
        [d["timing"]["t_land"], d["timing"]["t_lift"]],
        [d["tvr"][k] for k in ("t_xprime", "t_yprime", "kappa_x", "kappa_y")],
        list(d["policy"]["layers"]),
        [d["safety"]["k_eps"], d["safety"]["eta"]],
        [d["reward"][k] for k in ("r_a", "w_b", "w_t", "w_s", "w_c")],
        [d["behavior"]["xd_des"], d["behavior"]["wz_des"]],
    )


@pytest.mark.parametrize("name", C.PRESETS)
def test_preset_dump_reproduces_table_bit_exactly(name):
    dumped = yaml.safe_load(C.resolve(None, name).dump())
    got = table_row(dumped)
    for g, w in zip(got, PARAMETER_TABLE[name]):
        assert len(g) == len(w)
        for a, b in zip(g, w):
            assert float(a).hex() == float(b).hex()


@pytest.mark.parametrize("name", C.PRESETS)
def test_dump_load_round_trip(name, tmp_path):
    cfg = C.resolve(None, name).replace(seed=7, train={"episodes": 3})
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    back = C.load(path)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_hash_changes_with_content():
    a = C.resolve(None, "draco_walking")
    assert a.config_hash() != a.replace(seed=1).config_hash()
    assert a.config_hash() == C.resolve(None, "draco_walking").config_hash()


def test_missing_required_field_names_path():
    with pytest.raises(C.ConfigError) as info:
        C.resolve({"lipm": {"l_max": 0.7}, "safety": {"k_eps": 1.0, "eta": 0.5}, "policy": {"layers": [8]}})
    assert info.value.path == "lipm.h"
    assert "lipm.h" in str(info.value) and "missing" in str(info.value)


def test_unknown_key_rejected():
    with pytest.raises(C.ConfigError) as info:
        C.resolve({"lipm": {"hh": 1.0}}, "draco_walking")
    assert info.value.path == "lipm.hh"


@pytest.mark.parametrize("override, path", [
    ({"safety": {"eta": 1.5}}, "safety.eta"),
    ({"lipm": {"h": -1.0}}, "lipm.h"),
    ({"tvr": {"t_xprime": 0.0}}, "tvr.t_xprime"),
    ({"train": {"gamma": 1.0}}, "train.gamma"),
    ({"lipm": {"h": "tall"}}, "lipm.h"),
    ({"policy": {"layers": 64}}, "policy.layers"),
    ({"train": {"episodes": 2.5}}, "train.episodes"),
])
def test_invalid_values_report_field(override, path):
    with pytest.raises(C.ConfigError) as info:
        C.resolve(override, "draco_walking")
    assert info.value.path == path


def test_unknown_preset():
    with pytest.raises(C.ConfigError):
        C.resolve(None, "cassie")


def test_file_preset_key_and_override(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("preset: atlas_walking\nseed: 3\n")
    assert C.load(path).lipm.h == 0.82
    assert C.load(path, "draco_walking").lipm.h == 0.93
    path.write_text("lipm: [1, 2\n")
    with pytest.raises(C.ConfigError):
        C.load(path)


def test_manifest_contents():
    cfg = C.resolve(None, "draco_walking")
    man = C.manifest(cfg, "train", ["train", "--out", "x"])
    assert man["config_hash"] == cfg.config_hash() and man["seed"] == 0
    assert man["code_version"] and man["config"]["lipm"]["h"] == 0.93
    json.dumps(man)


def test_builders_carry_values():
    cfg = C.resolve(None, "atlas_turning")
    assert C.lipm_params(cfg).l_max == 0.55
    assert C.tvr_gains(cfg).kappa_x == -0.16
    fc = C.filter_config(cfg)
    assert fc.k_eps == 1e5 and fc.eta == 0.8
    assert np.allclose(np.hypot(*fc.a_max), 0.55)
    env = C.env_factory(cfg)(np.random.default_rng(0))
    env.reset()
    assert env.ref.yaw_rate == 0.09 and env.ref.speed == 0.0
    bundle = C.policy_bundle(cfg)
    assert bundle.policy.net.sizes == [13, 64, 64, 2]
