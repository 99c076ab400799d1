import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from ThermoForge.TFConfig import (  # noqa: E402
    FnoParams,
    GeometrySpec,
    ProcessParams,
    RunConfig,
    TrainParams,
)
from ThermoForge.TFGeometry import VoxelPart, attach_substrate, generate_shape  # noqa: E402
from ThermoForge.TFMaterial import MaterialModel  # noqa: E402
from ThermoForge.TFThermal import simulate  # noqa: E402
from ThermoForge.TFToolpath import plan_zigzag  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", help="run desk-scale acceptance runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def model():
    return MaterialModel()


@pytest.fixture
def small_part():
    return generate_shape(3, "holed", (4, 4, 4), element_size=2.0)


@pytest.fixture
def small_domain(small_part):
    return attach_substrate(small_part, layers=2)


@pytest.fixture
def small_history(small_domain, model):
    return simulate(small_domain, plan_zigzag(small_domain), model)


def block_part(dims, element_size=2.0):
    return VoxelPart(dims=dims, occupancy=np.ones(dims, dtype=bool), element_size=element_size)


def same_part(a, b):
    return (
        a.dims == b.dims
        and a.element_size == b.element_size
        and np.array_equal(a.occupancy, b.occupancy)
    )


def tiny_config(n_geometries=3, epochs=2):
    families = ["carved", "stacked", "holed"]
    return RunConfig(
        geometries=tuple(
            GeometrySpec(seed=n + 1, family=families[n % 3], dims=(4, 4, 4))
            for n in range(n_geometries)
        ),
        process=ProcessParams(k_recent=2, window_edge=5, max_windows=30),
        fno=FnoParams(d_v=4, depth=1, modes=(2, 2, 2)),
        train=TrainParams(epochs=epochs, batch_size=8, worst_k=3),
    ).validate()
