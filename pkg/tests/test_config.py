import pytest
import yaml

from conftest import base_config
from sicnode.config import (EXPERIMENT_DEFAULTS, ConfigUnreadable, SchemaViolation,
                            config_from_dict, load_config)


def test_defaults_fill_in():
    cfg = config_from_dict(base_config())
    assert cfg.noise["t2star_e_us"] == 2.04
    assert set(cfg.experiments) == set(EXPERIMENT_DEFAULTS)
    p = cfg.params()
    assert p.d_gs == 1365.0 and p.t_pi_n == 2.328


def test_missing_d_gs_names_field():
    with pytest.raises(SchemaViolation) as exc:
        config_from_dict({"register": {"a_zz_mhz": 12.4}})
    assert exc.value.field == "register.d_gs_mhz"
    with pytest.raises(SchemaViolation) as exc:
        config_from_dict({})
    assert exc.value.field == "register.d_gs_mhz"


@pytest.mark.parametrize("override,field", [
    ({"noise": {"contrast": 1.5}}, "noise.contrast"),
    ({"noise": {"shots": 2.5}}, "noise.shots"),
    ({"noise": {"bogus": 1}}, "noise.bogus"),
    ({"noise": {"hahn_t2_us": 1.0}}, "noise.hahn_t2_us"),
    ({"register": {"gamma_n_sign": 0}}, "register.gamma_n_sign"),
    ({"register": {"a_tensor_mhz": [1, 2, 3]}}, "register.a_tensor_mhz"),
    ({"register": {"t_pi_e_us": "fast"}}, "register.t_pi_e_us"),
    ({"experiments": {"dd_t2": {"n_list": [3]}}}, "experiments.dd_t2.n_list"),
    ({"experiments": {"bell": {"n_list": [6]}}}, "experiments.bell.n_list"),
    ({"experiments": {"bell": {"bootstrap_resamples": 50}}}, "experiments.bell.bootstrap_resamples"),
    ({"experiments": {"ramsey": {"target": "both"}}}, "experiments.ramsey.target"),
    ({"experiments": {"teleport": {}}}, "experiments.teleport"),
    ({"init_polarization": 2.0}, "init_polarization"),
])
def test_schema_violations(override, field):
    with pytest.raises(SchemaViolation) as exc:
        config_from_dict(base_config(**override))
    assert exc.value.field == field
    assert exc.value.kind == "schema_violation"


def test_tensor_and_vector_overrides():
    cfg = config_from_dict(base_config(register={
        "d_gs_mhz": 1365.0, "a_tensor_mhz": [0, 0, 0, 0, 0, 0, 0, 0, 10.0],
        "b_field_gs": [0, 0, 4.2]}))
    p = cfg.params()
    assert p.hyperfine[2, 2] == 10.0 and p.b_field[2] == 4.2


def test_load_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(base_config()))
    cfg = load_config(path)
    assert cfg.seed == 11
    with pytest.raises(ConfigUnreadable):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("register: [unclosed")
    with pytest.raises(ConfigUnreadable):
        load_config(bad)


def test_hash_depends_on_seed_only_through_seed():
    cfg = config_from_dict(base_config())
    assert cfg.hash() == config_from_dict(base_config()).hash()
    assert cfg.with_seed(12).hash() != cfg.hash()
    assert cfg.seed == 11
