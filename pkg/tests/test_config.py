import json

import pytest

from evlab.config import DEFAULTS, load_config, parse_override
from evlab.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg.eos.k == 2.0 and cfg.gamma == 0.02 and cfg.nu_ring == -0.2
    assert cfg.grid.quadrature_order == (64, 24, 16)
    assert cfg.to_dict()["grid"]["orders"] == DEFAULTS["grid"]["orders"]


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"gamma": 0.01, "evolve": {"dt": 0.5}}))
    cfg = load_config(path, ["gamma=0.04", "sample.expression=r*w"])
    assert cfg.gamma == 0.04
    assert cfg.evolve.dt == 0.5
    assert cfg.sample.expression == "r*w"


def test_parse_override_json_and_text():
    assert parse_override("a.b=[1, 2]") == (["a", "b"], [1, 2])
    assert parse_override("a=hello") == (["a"], "hello")
    with pytest.raises(ConfigError):
        parse_override("novalue")
    with pytest.raises(ConfigError):
        parse_override("=3")


@pytest.mark.parametrize("override", [
    "gamma=-1", "gamma=0", "eos.k=3.5", "eos.k=0", "eos.kind=\"isothermal\"", "nu_ring=0.1",
    "grid.nr=0", "grid.nL=15", "grid.nr=2.5", "evolve.dt=-1", "evolve.scheme=\"spectral\"",
    "sample.generator_family=\"weird\"", "sample.count=0", "scan.gammas=[0.01,-1]",
    "output.format=\"parquet\"", "gamma=true", "nope=1", "grid.nope=1", "grid=3",
])
def test_invalid_values(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_vacuum_is_a_valid_configuration():
    assert load_config(None, ["nu_ring=0"]).nu_ring == 0.0


def test_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(arr)
    unknown = tmp_path / "u.json"
    unknown.write_text(json.dumps({"evolve": {"speed": 1}}))
    with pytest.raises(ConfigError):
        load_config(unknown)
