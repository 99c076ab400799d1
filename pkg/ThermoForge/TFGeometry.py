"""Voxel part generation, validation and substrate attachment.

Parts live on a uniform grid indexed [i, j, k] = [x, y, z], z pointing up along the
build direction. A BuildDomain is the part shifted up onto a substrate slab that spans
the full x-y footprint of the domain box.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum, auto
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy import ndimage

from .TFErrors import FormatError, GeometryError

logger = logging.getLogger(__name__)

# Largest part dimension after normalisation, in mm.
PART_EXTENT_MM = 40.0
MIN_FAMILY_DIM = 4
DEFAULT_SUBSTRATE_LAYERS = 2
AMBIENT_T = 25.0

PART_MAGIC = b"VOXPART1"

Index = Tuple[int, int, int]

# 6-connectivity stencil used for flood fill.
FACE_NEIGHBORS = ndimage.generate_binary_structure(3, 1)


class ShapeFamily(Enum):
    """Procedural shape families. Each one starts from a solid block."""

    carved = auto()  # pocket removed from the upper region
    stacked = auto()  # tiers of shrinking footprint
    holed = auto()  # cylindrical through-hole


@dataclass(frozen=True, eq=False)
class VoxelPart:
    """Boolean occupancy on a dims[0] x dims[1] x dims[2] grid of cubes with edge
    element_size (mm)."""

    dims: Index
    occupancy: np.ndarray
    element_size: float

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != tuple(self.dims):
            raise GeometryError(f"occupancy shape {occ.shape} != dims {self.dims}")
        if any(d < 1 for d in self.dims):
            raise GeometryError(f"dims must be positive, got {self.dims}")
        if not self.element_size > 0:
            raise GeometryError(f"element_size must be positive, got {self.element_size}")
        occ = occ.copy()
        occ.setflags(write=False)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "occupancy", occ)

    @property
    def voxel_count(self) -> int:
        return int(self.occupancy.sum())


@dataclass(frozen=True, eq=False)
class BuildDomain:
    """The simulation domain: part on top of `substrate_layers` full substrate layers.

    Face classes are not stored per face because they depend on which elements are
    active; see face_classes().
    """

    part: VoxelPart
    substrate_layers: int = DEFAULT_SUBSTRATE_LAYERS
    ambient_T: float = AMBIENT_T
    dirichlet_T: float = AMBIENT_T

    def __post_init__(self):
        if self.substrate_layers < 0:
            raise GeometryError(
                f"substrate_layers must be non-negative, got {self.substrate_layers}"
            )

    @property
    def dims(self) -> Index:
        nx, ny, nz = self.part.dims
        return (nx, ny, nz + self.substrate_layers)

    @property
    def element_size(self) -> float:
        return self.part.element_size

    @property
    def element_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def substrate(self) -> np.ndarray:
        """Mask of substrate elements (pre-activated at ambient temperature)."""
        mask = np.zeros(self.dims, dtype=bool)
        mask[:, :, : self.substrate_layers] = True
        return mask

    @property
    def occupancy(self) -> np.ndarray:
        occ = self.substrate
        occ[:, :, self.substrate_layers :] = self.part.occupancy
        return occ

    def to_domain(self, part_index: Index) -> Index:
        i, j, k = part_index
        return (int(i), int(j), int(k) + self.substrate_layers)


def face_classes(domain: BuildDomain, active: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Classify the exterior faces of the active material.

    Returns (n_conv, dirichlet): the number of convection faces per element, and a mask
    of elements whose bottom face is a Dirichlet face. Faces between two active elements
    are interior; every other face of an active element is convection except the bottom
    faces of the lowest substrate layer.
    """
    active = np.asarray(active, dtype=bool)
    padded = np.pad(active, 1, constant_values=False)
    core = padded[1:-1, 1:-1, 1:-1]
    n_conv = np.zeros(active.shape, dtype=np.int8)
    for axis in range(3):
        for shift in (-1, 1):
            neighbor = np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
            n_conv += (core & ~neighbor).astype(np.int8)

    dirichlet = np.zeros(active.shape, dtype=bool)
    if domain.substrate_layers > 0:
        dirichlet[:, :, 0] = active[:, :, 0]
        # Bottom faces of the substrate are Dirichlet, not convection.
        n_conv[:, :, 0] -= dirichlet[:, :, 0].astype(np.int8)
    return n_conv, dirichlet


def is_connected(occupancy: np.ndarray) -> bool:
    """True if the occupied voxels form exactly one 6-connected component."""
    _, count = ndimage.label(occupancy, structure=FACE_NEIGHBORS)
    return count == 1


def unsupported_voxels(occupancy: np.ndarray) -> np.ndarray:
    """Occupied voxels above z=0 with no occupied 6-neighbor at the same or lower z."""
    occ = np.asarray(occupancy, dtype=bool)
    padded = np.pad(occ, 1, constant_values=False)
    core = padded[1:-1, 1:-1, 1:-1]
    supported = padded[1:-1, 1:-1, :-2].copy()  # voxel directly below
    for axis in (0, 1):
        for shift in (-1, 1):
            supported |= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    bad = core & ~supported
    bad[:, :, 0] = False
    return bad


def validate_part(part: VoxelPart) -> VoxelPart:
    """Reject parts that are empty, disconnected or not buildable. Nothing is fixed up."""
    if part.voxel_count == 0:
        raise GeometryError("part has no occupied voxels")
    if not is_connected(part.occupancy):
        raise GeometryError("occupied voxels are not a single 6-connected component")
    floating = np.argwhere(unsupported_voxels(part.occupancy))
    if len(floating):
        raise GeometryError(
            f"{len(floating)} unsupported voxels, first at {tuple(floating[0])}"
        )
    return part


def _carved(rng: np.random.Generator, dims: Index) -> np.ndarray:
    nx, ny, nz = dims
    occ = np.ones(dims, dtype=bool)
    # Pocket walls stay at least one voxel thick so the upper region remains a ring.
    x0 = int(rng.integers(1, nx // 2))
    x1 = int(rng.integers(nx // 2 + 1, nx))
    y0 = int(rng.integers(1, ny // 2))
    y1 = int(rng.integers(ny // 2 + 1, ny))
    z0 = int(rng.integers(nz // 2, nz - 1))
    occ[x0:x1, y0:y1, z0:] = False
    return occ


def _stacked(rng: np.random.Generator, dims: Index) -> np.ndarray:
    nx, ny, nz = dims
    occ = np.zeros(dims, dtype=bool)
    tiers = int(rng.integers(2, min(4, nz // 2) + 1))
    cuts = np.sort(rng.choice(np.arange(1, nz), size=tiers - 1, replace=False))
    bounds = [0, *cuts.tolist(), nz]
    x0, x1, y0, y1 = 0, nx, 0, ny
    for tier in range(tiers):
        occ[x0:x1, y0:y1, bounds[tier] : bounds[tier + 1]] = True
        # Next tier footprint lies inside this one.
        if x1 - x0 > 2:
            x0 += int(rng.integers(0, (x1 - x0) // 3 + 1))
            x1 -= int(rng.integers(0, (x1 - x0) // 3 + 1))
        if y1 - y0 > 2:
            y0 += int(rng.integers(0, (y1 - y0) // 3 + 1))
            y1 -= int(rng.integers(0, (y1 - y0) // 3 + 1))
    return occ


def _holed(rng: np.random.Generator, dims: Index) -> np.ndarray:
    occ = np.ones(dims, dtype=bool)
    axis = int(rng.integers(0, 3))
    across = [a for a in range(3) if a != axis]
    n_a, n_b = dims[across[0]], dims[across[1]]
    radius = max(0.75, float(rng.uniform(0.15, 0.25)) * min(n_a, n_b))
    margin = radius + 1.0
    ca = float(rng.uniform(margin, n_a - margin)) if n_a > 2 * margin else n_a / 2
    cb = float(rng.uniform(margin, n_b - margin)) if n_b > 2 * margin else n_b / 2
    grid_a, grid_b = np.meshgrid(
        np.arange(n_a) + 0.5, np.arange(n_b) + 0.5, indexing="ij"
    )
    hole = (grid_a - ca) ** 2 + (grid_b - cb) ** 2 <= radius**2
    hole = np.expand_dims(hole, axis=axis)
    occ &= ~np.broadcast_to(hole, dims)
    return occ


FAMILY_BUILDERS = {
    ShapeFamily.carved: _carved,
    ShapeFamily.stacked: _stacked,
    ShapeFamily.holed: _holed,
}


def generate_shape(
    seed: int,
    family: Union[ShapeFamily, str],
    dims: Index,
    element_size: float = None,
) -> VoxelPart:
    """Generate a valid part of the given family. Deterministic for (seed, family, dims).

    element_size defaults to scaling the largest dimension to PART_EXTENT_MM.
    """
    if isinstance(family, str):
        try:
            family = ShapeFamily[family]
        except KeyError:
            raise GeometryError(f"unknown shape family {family!r}") from None
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < MIN_FAMILY_DIM:
        raise GeometryError(f"dims must be 3 values >= {MIN_FAMILY_DIM}, got {dims}")
    if element_size is None:
        element_size = PART_EXTENT_MM / max(dims)

    rng = np.random.default_rng([int(seed), family.value, *dims])
    occ = FAMILY_BUILDERS[family](rng, dims)
    part = validate_part(VoxelPart(dims=dims, occupancy=occ, element_size=element_size))
    logger.info(
        "generated %s part seed=%d dims=%s voxels=%d",
        family.name,
        seed,
        dims,
        part.voxel_count,
    )
    return part


def attach_substrate(
    part: VoxelPart,
    layers: int = DEFAULT_SUBSTRATE_LAYERS,
    ambient_T: float = AMBIENT_T,
    dirichlet_T: float = None,
) -> BuildDomain:
    """Put the part on `layers` substrate layers spanning the domain's x-y footprint."""
    if layers < 1:
        raise GeometryError(f"substrate layers must be >= 1, got {layers}")
    if dirichlet_T is None:
        dirichlet_T = ambient_T
    return BuildDomain(
        part=part,
        substrate_layers=int(layers),
        ambient_T=float(ambient_T),
        dirichlet_T=float(dirichlet_T),
    )


def element_centers(dims: Index, element_size: float) -> np.ndarray:
    """Centers of all elements in mm, shape dims + (3,)."""
    grids = np.meshgrid(*(np.arange(n) + 0.5 for n in dims), indexing="ij")
    return np.stack(grids, axis=-1) * element_size


# Part file: magic, 3 x u32 dims, f64 element size, bit-packed occupancy (x fastest,
# least significant bit first).
_PART_HEADER = struct.Struct("<8s3Id")


def save_part(part: VoxelPart, path: Union[str, Path]) -> Path:
    path = Path(path)
    bits = np.packbits(part.occupancy.ravel(order="F"), bitorder="little")
    with path.open("wb") as fh:
        fh.write(_PART_HEADER.pack(PART_MAGIC, *part.dims, part.element_size))
        fh.write(bits.tobytes())
    return path


def load_part(path: Union[str, Path]) -> VoxelPart:
    raw = Path(path).read_bytes()
    if len(raw) < _PART_HEADER.size:
        raise FormatError(f"{path}: truncated part header")
    magic, nx, ny, nz, element_size = _PART_HEADER.unpack_from(raw)
    if magic != PART_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    count = nx * ny * nz
    payload = raw[_PART_HEADER.size :]
    if len(payload) != math.ceil(count / 8):
        raise FormatError(f"{path}: expected {math.ceil(count / 8)} occupancy bytes")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    occ = bits[:count].astype(bool).reshape((nx, ny, nz), order="F")
    return VoxelPart(dims=(nx, ny, nz), occupancy=occ, element_size=element_size)
