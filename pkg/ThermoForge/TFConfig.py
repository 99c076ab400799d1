"""Run configuration: a tree of frozen dataclasses with a JSON (or TOML) file form.

    {"schema": 1, "seed": 0, "geometries": [{"seed": 1, "family": "carved", "dims": [12, 12, 12]}],
     "process": {...}, "material": {...}, "fno": {...}, "train": {...}, "paths": {...}}

Missing sections and keys take their defaults; unknown keys are rejected.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import tomli

from .TFErrors import ConfigError
from .TFGeometry import MIN_FAMILY_DIM, ShapeFamily

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = 1


@dataclass(frozen=True)
class GeometrySpec:
    seed: int = 0
    family: str = "carved"
    dims: Tuple[int, int, int] = (12, 12, 12)


@dataclass(frozen=True)
class ProcessParams:
    element_size: Optional[float] = None  # None: largest part dimension scaled to 40 mm
    tool_speed: float = 5.0
    activation_T: float = 1750.0
    ambient_T: float = 25.0
    dirichlet_T: float = 25.0
    substrate_layers: int = 2
    k_recent: int = 10
    window_edge: int = 11
    max_windows: Optional[int] = None  # per geometry


@dataclass(frozen=True)
class MaterialOverrides:
    """Values left as None keep the built-in steel surrogate."""

    density: Optional[Union[float, Dict]] = None
    specific_heat: Optional[Union[float, Dict]] = None
    conductivity: Optional[Union[float, Dict]] = None
    enhanced_cp: Optional[float] = None
    solidus_T: Optional[float] = None
    emissivity: Optional[float] = None
    h_inf: Optional[float] = None

    def as_overrides(self) -> Dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class FnoParams:
    d_v: int = 32
    depth: int = 4
    modes: Tuple[int, int, int] = (6, 6, 6)
    activation: str = "gelu"


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    test_fraction: float = 0.1
    split_seed: int = 0
    init_seed: int = 0
    worst_k: int = 7


@dataclass(frozen=True)
class RunPaths:
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    geometries: Tuple[GeometrySpec, ...] = ()
    process: ProcessParams = field(default_factory=ProcessParams)
    material: MaterialOverrides = field(default_factory=MaterialOverrides)
    fno: FnoParams = field(default_factory=FnoParams)
    train: TrainParams = field(default_factory=TrainParams)
    paths: RunPaths = field(default_factory=RunPaths)
    seed: int = 0
    deterministic: bool = False
    threads: int = 1

    def validate(self) -> RunConfig:
        """Range-check every value; raise ConfigError naming the dotted key."""
        for n, geo in enumerate(self.geometries):
            key = f"geometries[{n}]"
            if geo.family not in ShapeFamily.__members__:
                _fail(f"{key}.family", geo.family, f"one of {sorted(ShapeFamily.__members__)}")
            if len(geo.dims) != 3 or min(geo.dims) < MIN_FAMILY_DIM:
                _fail(f"{key}.dims", geo.dims, f"three values >= {MIN_FAMILY_DIM}")
            _check(f"{key}.seed", geo.seed, 0)

        p = self.process
        if p.element_size is not None:
            _check("process.element_size", p.element_size, 0, strict=True)
        _check("process.tool_speed", p.tool_speed, 0, strict=True)
        _check("process.ambient_T", p.ambient_T, -273.15, strict=True)
        _check("process.activation_T", p.activation_T, p.ambient_T, strict=True)
        _check("process.dirichlet_T", p.dirichlet_T, -273.15, strict=True)
        _check("process.substrate_layers", p.substrate_layers, 1)
        _check("process.k_recent", p.k_recent, 1)
        _check("process.window_edge", p.window_edge, 1)
        if p.window_edge % 2 == 0:
            _fail("process.window_edge", p.window_edge, "an odd number")
        if p.max_windows is not None:
            _check("process.max_windows", p.max_windows, 1)

        m = self.material
        for name in ("enhanced_cp",):
            if getattr(m, name) is not None:
                _check(f"material.{name}", getattr(m, name), 0, strict=True)
        for name in ("emissivity", "h_inf"):
            if getattr(m, name) is not None:
                _check(f"material.{name}", getattr(m, name), 0)
        if m.solidus_T is not None:
            _check("material.solidus_T", m.solidus_T, p.ambient_T, strict=True)
            if m.solidus_T >= p.activation_T:
                _fail("material.solidus_T", m.solidus_T, "below process.activation_T")

        f = self.fno
        _check("fno.d_v", f.d_v, 1)
        _check("fno.depth", f.depth, 1)
        if len(f.modes) != 3 or min(f.modes) < 1:
            _fail("fno.modes", f.modes, "three positive integers")
        if any(2 * m - 1 > p.window_edge for m in f.modes):
            _fail("fno.modes", f.modes, f"at most {(p.window_edge + 1) // 2} per axis")
        if f.activation not in ("gelu", "identity"):
            _fail("fno.activation", f.activation, "'gelu' or 'identity'")

        t = self.train
        _check("train.epochs", t.epochs, 1)
        _check("train.lr", t.lr, 0, strict=True)
        _check("train.weight_decay", t.weight_decay, 0)
        _check("train.batch_size", t.batch_size, 1)
        if not 0.0 < t.test_fraction < 1.0:
            _fail("train.test_fraction", t.test_fraction, "within (0, 1)")
        _check("train.split_seed", t.split_seed, 0)
        _check("train.init_seed", t.init_seed, 0)
        _check("train.worst_k", t.worst_k, 0)

        _check("seed", self.seed, 0)
        _check("threads", self.threads, 1)
        return self

    def with_overrides(
        self,
        seed: Optional[int] = None,
        deterministic: Optional[bool] = None,
        threads: Optional[int] = None,
        out_dir: Optional[str] = None,
    ) -> RunConfig:
        """Apply command-line flags. A seed reseeds the split and the initialisation."""
        config = self
        if seed is not None:
            config = replace(
                config,
                seed=int(seed),
                train=replace(config.train, split_seed=int(seed), init_seed=int(seed)),
            )
        if deterministic is not None:
            config = replace(config, deterministic=bool(deterministic))
        if threads is not None:
            config = replace(config, threads=int(threads))
        if out_dir is not None:
            config = replace(config, paths=RunPaths(out_dir=str(out_dir)))
        return config.validate()

    def to_mapping(self) -> Dict:
        data = asdict(self)
        data["geometries"] = [
            {**g, "dims": list(g["dims"])} for g in data["geometries"]
        ]
        data["fno"]["modes"] = list(data["fno"]["modes"])
        return {"schema": CONFIG_SCHEMA, **data}

    @classmethod
    def from_mapping(cls, data: Dict) -> RunConfig:
        data = dict(data)
        schema = data.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"schema: unsupported config schema {schema!r}")
        sections = {
            "process": ProcessParams,
            "material": MaterialOverrides,
            "fno": FnoParams,
            "train": TrainParams,
            "paths": RunPaths,
        }
        kwargs = {}
        for key, value in data.items():
            if key == "geometries":
                kwargs[key] = tuple(
                    _build(GeometrySpec, g, f"geometries[{n}]") for n, g in enumerate(value)
                )
            elif key in sections:
                kwargs[key] = _build(sections[key], value, key)
            elif key in ("seed", "threads"):
                kwargs[key] = int(value)
            elif key == "deterministic":
                kwargs[key] = bool(value)
            else:
                raise ConfigError(f"{key}: unknown configuration key")
        return cls(**kwargs).validate()


def _fail(key: str, value, expected: str):
    raise ConfigError(f"{key}: got {value!r}, expected {expected}")


def _check(key: str, value, lower: float, strict: bool = False):
    expected = f"a number {'>' if strict else '>='} {lower}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(key, value, expected)
    if value <= lower if strict else value < lower:
        _fail(key, value, expected)


def _build(cls, values, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected a table, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown configuration key")
    converted = {}
    for key, value in values.items():
        if key in ("dims", "modes"):
            value = tuple(int(v) for v in value)
        converted[key] = value
    return cls(**converted)


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a JSON or (by suffix) TOML configuration file."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with path.open("rb") as fh:
                data = tomli.load(fh)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from None
    config = RunConfig.from_mapping(data)
    logger.info("loaded config %s with %d geometries", path, len(config.geometries))
    return config


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config.to_mapping(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def desk_config(n_geometries: int = 3, dims: Tuple[int, int, int] = (12, 12, 12)) -> RunConfig:
    """Laptop-sized run: a few 12^3 parts cycling through the shape families."""
    families = list(ShapeFamily.__members__)
    geometries = tuple(
        GeometrySpec(seed=n + 1, family=families[n % len(families)], dims=dims)
        for n in range(n_geometries)
    )
    return RunConfig(
        geometries=geometries,
        process=ProcessParams(max_windows=1200),
    ).validate()
