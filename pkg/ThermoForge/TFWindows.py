"""Heat-affected windows: cubic blocks cut around recent deposits, with the model's
input channels, the next-step temperature target and the activation mask.

For event i the input is the snapshot taken just before deposit e_i and the target is
the snapshot taken one time step later. Windows are anchored on the k most recent
deposits e_{i-k+1} .. e_i. The mask (and the activation channel) is the material
present after e_i was deposited.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .TFErrors import FormatError, WindowError
from .TFGeometry import BuildDomain, Index, element_centers, face_classes
from .TFThermal import TemperatureHistory, ThermalState
from .TFToolpath import ActivationSchedule, schedule_hash

logger = logging.getLogger(__name__)

WINDOW_EDGE = 11
K_RECENT = 10
SCHEMA_VERSION = 1
DATASET_MAGIC = b"AMWIN01\0"


class Channel(IntEnum):
    """Input channel order, schema version 1."""

    T_in = 0
    rho_act = 1
    power = 2
    dx = 3
    dy = 4
    dz = 5
    d_conv = 6
    d_dirichlet = 7


N_INPUT = len(Channel)
# Blocks per sample on disk: inputs, then T_out and mask.
N_BLOCKS = N_INPUT + 2
CHANNEL_NAMES = [c.name for c in Channel] + ["T_out", "mask"]


@dataclass(frozen=True, eq=False)
class WindowSample:
    """One window. `inputs` is (8, e, e, e); target and mask are (e, e, e)."""

    geometry_id: int
    event: int
    anchor: Index
    inputs: np.ndarray
    target: np.ndarray
    mask: np.ndarray


@dataclass(eq=False)
class WindowDataset:
    """Columnar storage of windows sharing one channel schema and edge length."""

    inputs: np.ndarray
    targets: np.ndarray
    masks: np.ndarray
    anchors: np.ndarray
    events: np.ndarray
    geometry_ids: np.ndarray
    provenance: Dict = field(default_factory=dict)
    normalization: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def edge(self) -> int:
        return int(self.targets.shape[-1]) if self.targets.ndim == 4 else WINDOW_EDGE

    def sample(self, index: int) -> WindowSample:
        return WindowSample(
            geometry_id=int(self.geometry_ids[index]),
            event=int(self.events[index]),
            anchor=tuple(int(a) for a in self.anchors[index]),
            inputs=self.inputs[index],
            target=self.targets[index],
            mask=self.masks[index],
        )

    def __iter__(self) -> Iterator[WindowSample]:
        return (self.sample(i) for i in range(len(self)))

    def subset(self, indices: Sequence[int]) -> WindowDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return WindowDataset(
            inputs=self.inputs[indices],
            targets=self.targets[indices],
            masks=self.masks[indices],
            anchors=self.anchors[indices],
            events=self.events[indices],
            geometry_ids=self.geometry_ids[indices],
            provenance=dict(self.provenance),
            normalization=dict(self.normalization),
        )

    def window_ids(self) -> List[str]:
        """Human-readable ids: geometry:event:anchor."""
        return [
            f"{g}:{e}:{a[0]}-{a[1]}-{a[2]}"
            for g, e, a in zip(self.geometry_ids, self.events, self.anchors)
        ]

    @classmethod
    def empty(cls, edge: int = WINDOW_EDGE) -> WindowDataset:
        return cls(
            inputs=np.zeros((0, N_INPUT, edge, edge, edge), dtype=np.float32),
            targets=np.zeros((0, edge, edge, edge), dtype=np.float32),
            masks=np.zeros((0, edge, edge, edge), dtype=bool),
            anchors=np.zeros((0, 3), dtype=np.int64),
            events=np.zeros(0, dtype=np.int64),
            geometry_ids=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts: Sequence[WindowDataset]) -> WindowDataset:
        """Merge datasets in the given order. Normalisation must agree."""
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        edges = {p.edge for p in parts}
        if len(edges) != 1:
            raise WindowError(f"cannot merge datasets with window edges {sorted(edges)}")
        norms = [p.normalization for p in parts if p.normalization]
        if any(n != norms[0] for n in norms[1:]):
            raise WindowError("cannot merge datasets with different normalisation constants")
        sources = []
        for p in parts:
            sources.extend(p.provenance.get("sources", [p.provenance]))
        return cls(
            inputs=np.concatenate([p.inputs for p in parts]),
            targets=np.concatenate([p.targets for p in parts]),
            masks=np.concatenate([p.masks for p in parts]),
            anchors=np.concatenate([p.anchors for p in parts]),
            events=np.concatenate([p.events for p in parts]),
            geometry_ids=np.concatenate([p.geometry_ids for p in parts]),
            provenance={"channel_order_version": SCHEMA_VERSION, "sources": sources},
            normalization=dict(norms[0]) if norms else {},
        )


def characteristic_radius(alpha_p: float, dt: float) -> float:
    """Diffusion length sqrt(alpha_p dt) over one activation interval (mm for mm^2/s)."""
    if not alpha_p > 0 or not dt > 0:
        raise WindowError(f"alpha_p and dt must be positive, got {alpha_p}, {dt}")
    return float(np.sqrt(alpha_p * dt))


def suggested_edge(alpha_p: float, dt: float, element_size: float) -> int:
    """Odd window edge, in elements, spanning about ten characteristic radii."""
    span = 10.0 * characteristic_radius(alpha_p, dt) / element_size
    edge = int(round(span))
    return edge if edge % 2 == 1 else edge + 1


def count_windows(n_events: int, k_recent: int = K_RECENT) -> int:
    """Windows produced by last-k selection: min(i + 1, k) for each event i."""
    return int(sum(min(i + 1, k_recent) for i in range(n_events)))


def sample_events(
    n_events: int, max_windows: int, k_recent: int = K_RECENT, seed: int = 0
) -> List[int]:
    """Seeded subset of events whose last-k windows total at most `max_windows`
    (at least one event is always kept). Returns event indices in order."""
    if max_windows is None or count_windows(n_events, k_recent) <= max_windows:
        return list(range(n_events))
    chosen, total = [], 0
    for event in np.random.default_rng(seed).permutation(n_events):
        size = min(int(event) + 1, k_recent)
        if chosen and total + size > max_windows:
            continue
        chosen.append(int(event))
        total += size
    return sorted(chosen)


_FACE_DIRS = [
    (axis, sign) for axis in range(3) for sign in (-1, 1)
]


def convection_face_centers(domain: BuildDomain, active: np.ndarray) -> np.ndarray:
    """Centres (mm) of every convection face of the active material."""
    centers = element_centers(domain.dims, domain.element_size)
    padded = np.pad(active, 1, constant_values=False)
    core = (slice(1, -1),) * 3
    chunks = []
    for axis, sign in _FACE_DIRS:
        neighbor = np.roll(padded, -sign, axis=axis)[core]
        exposed = active & ~neighbor
        if axis == 2 and sign == -1 and domain.substrate_layers > 0:
            exposed[:, :, 0] = False
        offset = np.zeros(3)
        offset[axis] = 0.5 * sign * domain.element_size
        chunks.append(centers[exposed] + offset)
    return np.concatenate(chunks) if chunks else np.zeros((0, 3))


def dirichlet_face_centers(domain: BuildDomain, active: np.ndarray) -> np.ndarray:
    _, dirichlet = face_classes(domain, active)
    centers = element_centers(domain.dims, domain.element_size)[dirichlet]
    centers[:, 2] -= 0.5 * domain.element_size
    return centers


def boundary_impact(domain: BuildDomain, state: ThermalState) -> Tuple[np.ndarray, np.ndarray]:
    """Distances (mm) from each active element centre to the nearest convection face
    centre and to the nearest Dirichlet face centre. Zero for inactive elements;
    infinite when the domain has no face of that kind."""
    active = np.asarray(state.active, dtype=bool)
    centers = element_centers(domain.dims, domain.element_size)[active]
    result = []
    for faces in (
        convection_face_centers(domain, active),
        dirichlet_face_centers(domain, active),
    ):
        field_ = np.zeros(domain.dims, dtype=np.float64)
        if len(faces) == 0:
            field_[active] = np.inf
        elif len(centers):
            distances, _ = cKDTree(faces).query(centers)
            field_[active] = distances
        result.append(field_)
    return result[0], result[1]


def _cut(padded: np.ndarray, center: Index, half: int) -> np.ndarray:
    i, j, k = center
    # `padded` is offset by `half` on every axis.
    return padded[i : i + 2 * half + 1, j : j + 2 * half + 1, k : k + 2 * half + 1]


def extract_windows(
    history: TemperatureHistory,
    domain: BuildDomain,
    k_recent: int = K_RECENT,
    edge: int = WINDOW_EDGE,
    geometry_id: int = 0,
    events: Iterable[int] = None,
    activation_T: float = 1750.0,
    alpha_p: float = None,
) -> WindowDataset:
    """Cut the last-k windows of every event (or of the selected `events`).

    With the diffusivity `alpha_p` (mm^2/s) given, an edge narrower than the suggested
    one is logged.
    """
    schedule = history.schedule
    if schedule is None:
        raise WindowError("history carries no schedule; load it with its toolpath")
    if len(history) != len(schedule) + 1:
        raise WindowError("history is incomplete for its schedule")
    if domain.substrate_layers < 1:
        raise WindowError("window extraction needs a substrate (Dirichlet boundary)")
    if edge < 1 or edge % 2 == 0:
        raise WindowError(f"window edge must be odd and positive, got {edge}")
    if k_recent < 1:
        raise WindowError(f"k_recent must be >= 1, got {k_recent}")
    if alpha_p is not None:
        wanted = suggested_edge(alpha_p, schedule.dt, domain.element_size)
        if edge < wanted:
            logger.warning("window edge %d is below the suggested %d elements", edge, wanted)

    half = edge // 2
    ambient = domain.ambient_T
    deposits = np.array([domain.to_domain(e) for e in schedule.events], dtype=np.int64)
    selected = sorted(set(range(len(schedule)) if events is None else events))

    pad = ((half, half),) * 3
    offsets = np.stack(
        np.meshgrid(*(np.arange(-half, half + 1),) * 3, indexing="ij")
    ).astype(np.float32)

    inputs, targets, masks, anchors, event_ids = [], [], [], [], []
    for event in selected:
        before = history.state(event)
        after = history.state(event + 1)
        post_active = after.active
        d_conv, d_dir = boundary_impact(domain, after)

        T_in = np.where(post_active, before.T, ambient)
        T_out = np.where(post_active, after.T, ambient)
        padded = {
            "T_in": np.pad(T_in, pad, constant_values=ambient),
            "T_out": np.pad(T_out, pad, constant_values=ambient),
            "mask": np.pad(post_active, pad, constant_values=False),
            "d_conv": np.pad(d_conv, pad, constant_values=0.0),
            "d_dir": np.pad(d_dir, pad, constant_values=0.0),
        }
        site = deposits[event]
        for anchor_event in range(max(0, event - k_recent + 1), event + 1):
            anchor = deposits[anchor_event]
            mask = _cut(padded["mask"], anchor, half)
            block = np.empty((N_INPUT, edge, edge, edge), dtype=np.float32)
            block[Channel.T_in] = _cut(padded["T_in"], anchor, half)
            block[Channel.rho_act] = mask
            block[Channel.power] = 1.0
            # Offset from each voxel to the deposition site, in elements.
            rel = (site - anchor).astype(np.float32)[:, None, None, None] - offsets
            block[Channel.dx : Channel.dz + 1] = np.clip(rel, -(edge - 1), edge - 1)
            block[Channel.d_conv] = _cut(padded["d_conv"], anchor, half)
            block[Channel.d_dirichlet] = _cut(padded["d_dir"], anchor, half)
            inputs.append(block)
            targets.append(_cut(padded["T_out"], anchor, half).astype(np.float32))
            masks.append(mask.copy())
            anchors.append(anchor)
            event_ids.append(event)

    if not inputs:
        dataset = WindowDataset.empty(edge)
    else:
        dataset = WindowDataset(
            inputs=np.stack(inputs),
            targets=np.stack(targets),
            masks=np.stack(masks),
            anchors=np.array(anchors, dtype=np.int64),
            events=np.array(event_ids, dtype=np.int64),
            geometry_ids=np.full(len(event_ids), geometry_id, dtype=np.int64),
        )
    dataset.provenance = {
        "geometry_id": int(geometry_id),
        "schedule_hash": schedule_hash(schedule),
        "channel_order_version": SCHEMA_VERSION,
        "k_recent": int(k_recent),
    }
    dataset.normalization = normalization_constants(domain, edge, activation_T)
    logger.info(
        "extracted %d windows from %d events (geometry %d)",
        len(dataset),
        len(selected),
        geometry_id,
    )
    return dataset


def normalization_constants(domain: BuildDomain, edge: int, activation_T: float) -> Dict:
    return {
        "ambient_T": float(domain.ambient_T),
        "activation_T": float(activation_T),
        "element_size": float(domain.element_size),
        "distance_scale": float(0.5 * edge * domain.element_size),
    }


# Dataset file: magic, u16 schema version, u16 edge, u16 block count, u32 sample count;
# per sample u32 geometry id, u32 event, 3 x u16 anchor, then f32 blocks in
# CHANNEL_NAMES order, each x-fastest.
_DATASET_HEADER = struct.Struct("<8sHHHI")
_SAMPLE_HEADER = struct.Struct("<II3H")


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.manifest.json")


def save_dataset(dataset: WindowDataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    edge = dataset.edge
    with path.open("wb") as fh:
        fh.write(
            _DATASET_HEADER.pack(DATASET_MAGIC, SCHEMA_VERSION, edge, N_BLOCKS, len(dataset))
        )
        for n in range(len(dataset)):
            fh.write(
                _SAMPLE_HEADER.pack(
                    int(dataset.geometry_ids[n]), int(dataset.events[n]), *dataset.anchors[n]
                )
            )
            blocks = np.concatenate(
                [
                    dataset.inputs[n],
                    dataset.targets[n][None],
                    dataset.masks[n][None].astype(np.float32),
                ]
            )
            fh.write(
                np.ascontiguousarray(blocks.transpose(0, 3, 2, 1), dtype="<f4").tobytes()
            )
    manifest = {
        "schema": SCHEMA_VERSION,
        "channels": CHANNEL_NAMES,
        "edge": edge,
        "samples": len(dataset),
        "provenance": dataset.provenance,
        "normalization": dataset.normalization,
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(path: Union[str, Path]) -> WindowDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: truncated dataset header")
    magic, version, edge, n_blocks, count = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema version {version}")
    if n_blocks != N_BLOCKS:
        raise FormatError(f"{path}: expected {N_BLOCKS} channel blocks, got {n_blocks}")
    voxels = edge**3
    record = _SAMPLE_HEADER.size + 4 * n_blocks * voxels
    if len(raw) != _DATASET_HEADER.size + count * record:
        raise FormatError(f"{path}: payload does not hold {count} samples")

    dataset = WindowDataset.empty(edge)
    if count:
        geometry_ids = np.empty(count, dtype=np.int64)
        events = np.empty(count, dtype=np.int64)
        anchors = np.empty((count, 3), dtype=np.int64)
        blocks = np.empty((count, n_blocks, edge, edge, edge), dtype=np.float32)
        offset = _DATASET_HEADER.size
        for n in range(count):
            g, e, a0, a1, a2 = _SAMPLE_HEADER.unpack_from(raw, offset)
            geometry_ids[n], events[n], anchors[n] = g, e, (a0, a1, a2)
            offset += _SAMPLE_HEADER.size
            flat = np.frombuffer(raw, dtype="<f4", count=n_blocks * voxels, offset=offset)
            blocks[n] = flat.reshape(n_blocks, edge, edge, edge).transpose(0, 3, 2, 1)
            offset += 4 * n_blocks * voxels
        dataset = WindowDataset(
            inputs=blocks[:, :N_INPUT].copy(),
            targets=blocks[:, N_INPUT].copy(),
            masks=blocks[:, N_INPUT + 1] > 0.5,
            anchors=anchors,
            events=events,
            geometry_ids=geometry_ids,
        )

    sidecar = manifest_path(path)
    if sidecar.exists():
        manifest = json.loads(sidecar.read_text())
        dataset.provenance = manifest.get("provenance", {})
        dataset.normalization = manifest.get("normalization", {})
    return dataset


def window_table(datasets: Mapping[int, WindowDataset]) -> List[Dict]:
    """Number of windows per geometry."""
    return [
        {"geometry_id": int(gid), "windows": len(ds)} for gid, ds in sorted(datasets.items())
    ]
