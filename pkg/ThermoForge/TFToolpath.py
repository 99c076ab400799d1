"""Serpentine ("zigzag") deposition planning.

Events are stored in part coordinates; BuildDomain.to_domain() shifts them onto the
substrate. Activation i happens at t_i = i * dt, with dt the time the tool needs to
cross one element.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from .TFErrors import FormatError, ToolpathError
from .TFGeometry import BuildDomain, Index

logger = logging.getLogger(__name__)

DEFAULT_TOOL_SPEED = 5.0  # mm/s
TOOLPATH_HEADER = "# zigzag v1 dt="


@dataclass(frozen=True, eq=False)
class ActivationSchedule:
    """Ordered activation events. events[n] = (i, j, k) in part coordinates."""

    events: np.ndarray
    dt: float
    tool_speed: float

    def __post_init__(self):
        events = np.asarray(self.events, dtype=np.int64).reshape(-1, 3)
        events.setflags(write=False)
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Tuple[Index, float]]:
        for n, event in enumerate(self.events):
            yield tuple(int(c) for c in event), n * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.events)) * self.dt


@dataclass(frozen=True)
class ScheduleStats:
    count: int
    duration: float
    dt: float


def _layer_order(layer: np.ndarray, z: int) -> List[Index]:
    """Serpentine order over one layer. Even layers scan x fastest, odd layers y
    fastest; the scan direction flips on every row."""
    nx, ny = layer.shape
    order = []
    if z % 2 == 0:
        for row, y in enumerate(range(ny)):
            xs = range(nx) if row % 2 == 0 else range(nx - 1, -1, -1)
            order.extend((x, y, z) for x in xs if layer[x, y])
    else:
        for row, x in enumerate(range(nx)):
            ys = range(ny) if row % 2 == 0 else range(ny - 1, -1, -1)
            order.extend((x, y, z) for y in ys if layer[x, y])
    return order


def plan_zigzag(domain: BuildDomain, tool_speed: float = DEFAULT_TOOL_SPEED) -> ActivationSchedule:
    """Plan the layer-by-layer serpentine toolpath over the part. Empty cells are
    skipped without advancing time."""
    if tool_speed <= 0:
        raise ToolpathError(f"tool speed must be positive, got {tool_speed}")
    occ = domain.part.occupancy
    if not occ.any():
        raise ToolpathError("cannot plan a toolpath over an empty part")

    events: List[Index] = []
    for z in range(occ.shape[2]):
        events.extend(_layer_order(occ[:, :, z], z))

    schedule = ActivationSchedule(
        events=np.array(events, dtype=np.int64),
        dt=domain.element_size / tool_speed,
        tool_speed=float(tool_speed),
    )
    logger.info(
        "planned zigzag toolpath: %d events, dt=%.4gs", len(schedule), schedule.dt
    )
    return schedule


def schedule_stats(schedule: ActivationSchedule) -> ScheduleStats:
    count = len(schedule)
    return ScheduleStats(count=count, duration=count * schedule.dt, dt=schedule.dt)


def schedule_hash(schedule: ActivationSchedule) -> str:
    """Stable digest of event order and time step, used for dataset provenance."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(schedule.events, dtype="<i4").tobytes())
    digest.update(np.float64(schedule.dt).tobytes())
    return digest.hexdigest()[:16]


def check_schedule(schedule: ActivationSchedule, domain: BuildDomain) -> None:
    """Verify the schedule is a permutation of the domain's part voxels."""
    occ = domain.part.occupancy
    if len(schedule) != int(occ.sum()):
        raise ToolpathError(
            f"schedule has {len(schedule)} events for {int(occ.sum())} part voxels"
        )
    events = schedule.events
    if (events < 0).any() or (events >= np.array(occ.shape)).any():
        raise ToolpathError("schedule event outside the part grid")
    hits = np.zeros(occ.shape, dtype=np.int64)
    np.add.at(hits, tuple(events.T), 1)
    if not np.array_equal(hits, occ.astype(np.int64)):
        raise ToolpathError("schedule does not cover each part voxel exactly once")


def save_toolpath(schedule: ActivationSchedule, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [f"{TOOLPATH_HEADER}{schedule.dt!r}", f"# tool_speed={schedule.tool_speed!r}"]
    lines.extend(f"{t!r} {i} {j} {k}" for (i, j, k), t in schedule)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_toolpath(path: Union[str, Path]) -> ActivationSchedule:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(TOOLPATH_HEADER):
        raise FormatError(f"{path}: missing '{TOOLPATH_HEADER}' header")
    try:
        dt = float(lines[0][len(TOOLPATH_HEADER) :])
    except ValueError:
        raise FormatError(f"{path}: bad dt in header {lines[0]!r}") from None

    tool_speed = float("nan")
    events = []
    for number, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# tool_speed="):
                tool_speed = float(line.split("=", 1)[1])
            continue
        fields = line.split()
        if len(fields) != 4:
            raise FormatError(f"{path}:{number}: expected 't i j k', got {line!r}")
        try:
            t = float(fields[0])
            event = tuple(int(f) for f in fields[1:])
        except ValueError:
            raise FormatError(f"{path}:{number}: unparsable event {line!r}") from None
        if not np.isclose(t, len(events) * dt, rtol=0, atol=1e-9 * max(1.0, t)):
            raise FormatError(f"{path}:{number}: time {t} is not {len(events)} * dt")
        events.append(event)
    return ActivationSchedule(
        events=np.array(events, dtype=np.int64).reshape(-1, 3),
        dt=dt,
        tool_speed=tool_speed,
    )
