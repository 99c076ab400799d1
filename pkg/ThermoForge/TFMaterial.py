"""Material model for the deposition simulation: temperature-dependent property tables,
the combined convection-radiation coefficient and the explicit stability bound.

Properties are in SI units (kg/m^3, J/(kg K), W/(m K)); temperatures in Celsius;
element sizes in mm as everywhere else in the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Tuple, Union

import numpy as np

from .TFErrors import ConfigError

STEFAN_BOLTZMANN = 5.670374419e-8  # W/(m^2 K^4)
KELVIN = 273.15
STABILITY_SAFETY = 0.5

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PropertyTable:
    """Piecewise-linear property over temperature, held constant beyond the ends."""

    temps: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.temps) != len(self.values) or not self.temps:
            raise ConfigError("property table needs matching, non-empty temps and values")
        if any(b <= a for a, b in zip(self.temps, self.temps[1:])):
            raise ConfigError(f"property table temps must increase: {self.temps}")
        if min(self.values) <= 0:
            raise ConfigError(f"property values must be positive: {self.values}")
        object.__setattr__(self, "temps", tuple(float(t) for t in self.temps))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def constant(cls, value: float) -> PropertyTable:
        return cls(temps=(0.0,), values=(value,))

    @classmethod
    def from_mapping(cls, data: Union[float, Mapping]) -> PropertyTable:
        if isinstance(data, (int, float)):
            return cls.constant(float(data))
        return cls(temps=tuple(data["temps"]), values=tuple(data["values"]))

    def __call__(self, T: ArrayLike) -> ArrayLike:
        if len(self.temps) == 1:
            return np.full_like(np.asarray(T, dtype=float), self.values[0])
        return np.interp(T, self.temps, self.values)


@dataclass(frozen=True)
class MaterialModel:
    """Thermal properties and process constants. Defaults are a constant-property
    S355-like steel; any table can be swapped for a temperature-dependent one."""

    density: PropertyTable = field(default_factory=lambda: PropertyTable.constant(7850.0))
    specific_heat: PropertyTable = field(
        default_factory=lambda: PropertyTable.constant(600.0)
    )
    conductivity: PropertyTable = field(
        default_factory=lambda: PropertyTable.constant(45.0)
    )
    enhanced_cp: float = 4537.9
    activation_T: float = 1750.0
    solidus_T: float = 1450.0
    emissivity: float = 0.35
    h_inf: float = 15.0
    sigma_b: float = STEFAN_BOLTZMANN

    def validate(self, ambient: float) -> MaterialModel:
        if not self.activation_T > self.solidus_T > ambient:
            raise ConfigError(
                "need activation_T > solidus_T > ambient, got "
                f"{self.activation_T} / {self.solidus_T} / {ambient}"
            )
        if self.enhanced_cp <= 0 or self.emissivity < 0 or self.h_inf < 0:
            raise ConfigError("enhanced_cp must be positive; emissivity, h_inf >= 0")
        return self

    def diffusivity(self, T: ArrayLike) -> ArrayLike:
        """Thermal diffusivity in mm^2/s."""
        return 1e6 * self.conductivity(T) / (self.density(T) * self.specific_heat(T))

    def with_overrides(self, **overrides) -> MaterialModel:
        tables = {"density", "specific_heat", "conductivity"}
        converted = {
            k: PropertyTable.from_mapping(v) if k in tables else float(v)
            for k, v in overrides.items()
            if v is not None
        }
        return replace(self, **converted)


def h_c(T: ArrayLike, model: MaterialModel, ambient: float) -> ArrayLike:
    """Combined heat transfer coefficient h_inf + linearised radiation, W/(m^2 K)."""
    Tk = np.asarray(T, dtype=float) + KELVIN
    Ta = ambient + KELVIN
    radiation = model.emissivity * model.sigma_b * (
        Tk**3 + Tk**2 * Ta + Tk * Ta**2 + Ta**3
    )
    return model.h_inf + radiation


def stable_dt(
    model: MaterialModel,
    element_size: float,
    ambient: float = 25.0,
    samples: int = 513,
) -> float:
    """Largest explicit sub-step, safety * rho c_p dx^2 / (6 k), minimised over
    [ambient, activation_T]."""
    table_temps = np.concatenate(
        [t.temps for t in (model.density, model.specific_heat, model.conductivity)]
    )
    T = np.concatenate([np.linspace(ambient, model.activation_T, samples), table_temps])
    T = T[(T >= ambient) & (T <= model.activation_T)]
    dx = element_size * 1e-3
    bound = model.density(T) * model.specific_heat(T) * dx**2 / (6.0 * model.conductivity(T))
    return float(STABILITY_SAFETY * np.min(bound))


def material_from_config(
    overrides: Mapping[str, object], activation_T: float, ambient: float
) -> MaterialModel:
    model = MaterialModel().with_overrides(**dict(overrides))
    model = replace(model, activation_T=float(activation_T))
    return model.validate(ambient)

