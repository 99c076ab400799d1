import pytest

from ThermoForge.TFErrors import ConfigError
from ThermoForge.TFMaterial import (
    STEFAN_BOLTZMANN,
    MaterialModel,
    PropertyTable,
    h_c,
    material_from_config,
    stable_dt,
)


def test_h_c_at_ambient(model):
    expected = 15.0 + 0.35 * STEFAN_BOLTZMANN * 4 * 298.15**3
    assert h_c(25.0, model, 25.0) == pytest.approx(expected, rel=1e-12)
    assert h_c(25.0, model, 25.0) == pytest.approx(17.10, abs=0.01)


def test_h_c_without_radiation_and_monotone():
    model = MaterialModel(emissivity=0.0)
    assert h_c(1200.0, model, 25.0) == 15.0
    default = MaterialModel()
    assert h_c(600.0, default, 25.0) > h_c(300.0, default, 25.0)


def test_stable_dt_constant_properties(model):
    assert stable_dt(model, 2.0) == pytest.approx(0.5 * 7850 * 600 * 0.002**2 / (6 * 45))
    assert stable_dt(model, 2.0) == pytest.approx(0.0349, abs=1e-4)
    doubled = model.with_overrides(conductivity=90.0)
    assert stable_dt(doubled, 2.0) == pytest.approx(stable_dt(model, 2.0) / 2)
    assert stable_dt(model, 4.0) == pytest.approx(4 * stable_dt(model, 2.0))


def test_stable_dt_takes_the_worst_temperature():
    model = MaterialModel(
        conductivity=PropertyTable(temps=(0.0, 1000.0), values=(30.0, 60.0))
    )
    worst = 0.5 * 7850 * 600 * 0.002**2 / (6 * 60.0)
    assert stable_dt(model, 2.0) == pytest.approx(worst)


def test_property_table_interpolates():
    table = PropertyTable(temps=(0.0, 100.0), values=(10.0, 20.0))
    assert table(50.0) == pytest.approx(15.0)
    assert table(500.0) == pytest.approx(20.0)
    with pytest.raises(ConfigError):
        PropertyTable(temps=(0.0, 100.0), values=(10.0, -1.0))


def test_material_validation():
    with pytest.raises(ConfigError):
        material_from_config({"solidus_T": 1800.0}, activation_T=1750.0, ambient=25.0)
    model = material_from_config({"h_inf": 0.0}, activation_T=1700.0, ambient=25.0)
    assert model.h_inf == 0.0 and model.activation_T == 1700.0
    assert model.diffusivity(25.0) == pytest.approx(45 / (7850 * 600) * 1e6)
