import json

import pytest

from conftest import tiny_config
from ThermoForge.TFConfig import (
    GeometrySpec,
    RunConfig,
    desk_config,
    load_config,
    save_config,
)
from ThermoForge.TFErrors import ConfigError

TOML_CONFIG = """
seed = 4

[[geometries]]
seed = 1
family = "holed"
dims = [8, 8, 8]

[[geometries]]
seed = 2
family = "stacked"
dims = [8, 8, 6]

[process]
tool_speed = 4.0
max_windows = 500

[material]
h_inf = 20.0

[fno]
modes = [4, 4, 4]

[train]
epochs = 5
"""


def test_json_round_trip(tmp_path):
    config = tiny_config()
    loaded = load_config(save_config(config, tmp_path / "run.json"))
    assert loaded == config
    data = json.loads((tmp_path / "run.json").read_text())
    assert data["schema"] == 1
    assert data["geometries"][0]["dims"] == [4, 4, 4]


def test_toml_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TOML_CONFIG)
    config = load_config(path)
    assert config.seed == 4
    assert config.geometries[1] == GeometrySpec(seed=2, family="stacked", dims=(8, 8, 6))
    assert config.process.tool_speed == 4.0 and config.process.max_windows == 500
    assert config.material.as_overrides() == {"h_inf": 20.0}
    assert config.fno.modes == (4, 4, 4)
    assert config.train.epochs == 5 and config.train.lr == 1e-3


@pytest.mark.parametrize(
    "data, key",
    [
        ({"train": {"epochs": 0}}, "train.epochs"),
        ({"train": {"epoch": 3}}, "train.epoch"),
        ({"fno": {"modes": [7, 6, 6]}}, "fno.modes"),
        ({"process": {"window_edge": 10}}, "process.window_edge"),
        ({"material": {"solidus_T": 1800.0}}, "material.solidus_T"),
        ({"geometries": [{"family": "wedge"}]}, "geometries[0].family"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_invalid_values_name_their_key(data, key):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_mapping(data)
    assert str(err.value).startswith(key)


def test_unreadable_files(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_overrides_reseed_split_and_init():
    config = desk_config().with_overrides(seed=9, threads=2, deterministic=True, out_dir="x")
    assert not desk_config().deterministic
    assert config.seed == 9
    assert config.train.split_seed == 9 and config.train.init_seed == 9
    assert config.threads == 2 and config.deterministic
    assert config.paths.out_dir == "x"
    with pytest.raises(ConfigError):
        desk_config().with_overrides(threads=0)


def test_desk_config_cycles_families():
    config = desk_config(4)
    assert [g.family for g in config.geometries] == ["carved", "stacked", "holed", "carved"]
    assert config.process.max_windows == 1200
