"""Transient heat conduction with sequential element activation.

Cell-centred finite volumes on the uniform voxel grid, explicit Euler in time:

    rho c_p V dT/dt = sum over faces of the heat flow into the element

Faces between two active elements conduct with the harmonic mean conductivity.
Every other face of active material loses heat by convection-radiation, except the
bottom faces of the substrate, which conduct toward the fixed temperature T_D held
half an element below the element centre. Inactive elements hold the ambient
temperature and take no part in the fluxes.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .TFErrors import FormatError, SimulationError
from .TFGeometry import BuildDomain, Index, face_classes
from .TFMaterial import MaterialModel, h_c, stable_dt
from .TFToolpath import ActivationSchedule, check_schedule

logger = logging.getLogger(__name__)

HISTORY_MAGIC = b"THIST01\0"


@dataclass(frozen=True, eq=False)
class ThermalState:
    """Temperature (C), activation and solidification flags over the domain grid."""

    T: np.ndarray
    active: np.ndarray
    solidified: np.ndarray
    time: float = 0.0


@dataclass(frozen=True, eq=False)
class TemperatureHistory:
    """Snapshots taken immediately before each activation event plus a final one.

    Temperatures are kept in single precision, the precision of the history file.
    `solidified` is only available for histories produced in this process.
    """

    times: np.ndarray
    temperatures: np.ndarray
    active: np.ndarray
    solidified: Optional[np.ndarray] = None
    schedule: Optional[ActivationSchedule] = None

    def __len__(self) -> int:
        return len(self.times)

    def state(self, index: int) -> ThermalState:
        solid = self.solidified[index] if self.solidified is not None else self.active[index]
        return ThermalState(
            T=self.temperatures[index].astype(np.float64),
            active=self.active[index],
            solidified=solid,
            time=float(self.times[index]),
        )


def initial_state(domain: BuildDomain) -> ThermalState:
    """Substrate pre-activated (and solid) at ambient temperature, part not yet built."""
    substrate = domain.substrate
    return ThermalState(
        T=np.full(domain.dims, domain.ambient_T, dtype=np.float64),
        active=substrate,
        solidified=substrate.copy(),
        time=0.0,
    )


def activate(
    state: ThermalState,
    element: Index,
    model: MaterialModel,
    domain: BuildDomain = None,
) -> ThermalState:
    """Deposit one element at the activation temperature. Neighbours are untouched."""
    element = tuple(int(c) for c in element)
    if domain is not None and not domain.occupancy[element]:
        raise SimulationError(f"element {element} is not occupied in the domain")
    if state.active[element]:
        raise SimulationError(f"element {element} is already active")
    T = state.T.copy()
    active = state.active.copy()
    solidified = state.solidified.copy()
    T[element] = model.activation_T
    active[element] = True
    solidified[element] = False
    return replace(state, T=T, active=active, solidified=solidified)


def enthalpy(state: ThermalState, domain: BuildDomain, model: MaterialModel) -> float:
    """Total sensible enthalpy sum(rho c_p V T) of the active material, J."""
    V = (domain.element_size * 1e-3) ** 3
    T = state.T[state.active]
    cp = np.where(
        state.solidified[state.active], model.specific_heat(T), model.enhanced_cp
    )
    return float(np.sum(model.density(T) * cp * V * T))


def heat_flow(
    T: np.ndarray,
    active: np.ndarray,
    n_conv: np.ndarray,
    dirichlet: np.ndarray,
    domain: BuildDomain,
    model: MaterialModel,
) -> np.ndarray:
    """Net heat flow into every element in W. Zero for inactive elements."""
    dx = domain.element_size * 1e-3
    area = dx * dx
    k = model.conductivity(T)
    Q = np.zeros_like(T)

    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        both = active[lo] & active[hi]
        k_lo, k_hi = k[lo], k[hi]
        k_face = 2.0 * k_lo * k_hi / (k_lo + k_hi)
        flow = np.where(both, k_face * area * (T[hi] - T[lo]) / dx, 0.0)
        Q[lo] += flow
        Q[hi] -= flow

    ambient = domain.ambient_T
    Q -= n_conv * h_c(T, model, ambient) * area * (T - ambient)
    Q += np.where(dirichlet, k * area * (domain.dirichlet_T - T) / (0.5 * dx), 0.0)
    return np.where(active, Q, 0.0)


def step(
    state: ThermalState,
    domain: BuildDomain,
    model: MaterialModel,
    dt_macro: float,
    max_sub_dt: float = None,
    event_index: int = None,
) -> ThermalState:
    """Advance by dt_macro with explicit sub-steps no longer than the stability bound."""
    if not dt_macro > 0:
        raise SimulationError(f"dt_macro must be positive, got {dt_macro}")
    bound = stable_dt(model, domain.element_size, ambient=domain.ambient_T)
    if max_sub_dt is not None:
        bound = min(bound, max_sub_dt)
    n_sub = max(1, math.ceil(dt_macro / bound - 1e-12))
    dt = dt_macro / n_sub

    V = (domain.element_size * 1e-3) ** 3
    active = state.active
    n_conv, dirichlet = face_classes(domain, active)
    T = state.T.copy()
    solidified = state.solidified.copy()

    for sub in range(n_sub):
        Q = heat_flow(T, active, n_conv, dirichlet, domain, model)
        cp = np.where(solidified, model.specific_heat(T), model.enhanced_cp)
        T = np.where(active, T + dt * Q / (model.density(T) * cp * V), domain.ambient_T)
        if not np.all(np.isfinite(T)):
            bad = np.argwhere(~np.isfinite(T))
            raise SimulationError(
                f"non-finite temperature in {len(bad)} elements, first at "
                f"{tuple(int(c) for c in bad[0])}",
                step_index=event_index,
                sub_step=sub,
                time=state.time + (sub + 1) * dt,
            )
        # Flags only ever flip from fresh to solid.
        solidified |= active & (T < model.solidus_T)

    logger.debug("stepped %.4gs in %d sub-steps of %.4gs", dt_macro, n_sub, dt)
    return ThermalState(T=T, active=active, solidified=solidified, time=state.time + dt_macro)


def simulate(
    domain: BuildDomain,
    schedule: ActivationSchedule,
    model: MaterialModel,
) -> TemperatureHistory:
    """Run the deposition: snapshot, activate, advance dt, for every event."""
    check_schedule(schedule, domain)
    model.validate(domain.ambient_T)
    state = initial_state(domain)

    n = len(schedule) + 1
    times = np.zeros(n, dtype=np.float64)
    temps = np.empty((n, *domain.dims), dtype=np.float32)
    active = np.empty((n, *domain.dims), dtype=bool)
    solid = np.empty((n, *domain.dims), dtype=bool)

    def record(index: int, s: ThermalState):
        times[index] = s.time
        temps[index] = s.T
        active[index] = s.active
        solid[index] = s.solidified

    for index, (event, _) in enumerate(schedule):
        record(index, state)
        state = activate(state, domain.to_domain(event), model, domain)
        state = step(state, domain, model, schedule.dt, event_index=index)
        if index % 500 == 0:
            logger.debug(
                "event %d/%d t=%.2fs Tmax=%.1f", index, len(schedule), state.time, state.T.max()
            )
    record(n - 1, state)

    logger.info(
        "simulated %d events over %.1fs, peak %.1fC",
        len(schedule),
        state.time,
        float(temps.max()),
    )
    return TemperatureHistory(
        times=times, temperatures=temps, active=active, solidified=solid, schedule=schedule
    )


# History file: magic, u32 element count, u32 snapshot count, then per snapshot f64
# time, f32 temperatures and bit-packed active flags, both in x-fastest element order.
_HISTORY_HEADER = struct.Struct("<8sII")


def save_history(history: TemperatureHistory, path: Union[str, Path]) -> Path:
    path = Path(path)
    n_elem = int(np.prod(history.temperatures.shape[1:]))
    with path.open("wb") as fh:
        fh.write(_HISTORY_HEADER.pack(HISTORY_MAGIC, n_elem, len(history)))
        for t, temps, act in zip(history.times, history.temperatures, history.active):
            fh.write(struct.pack("<d", t))
            fh.write(temps.ravel(order="F").astype("<f4").tobytes())
            fh.write(np.packbits(act.ravel(order="F"), bitorder="little").tobytes())
    return path


def load_history(
    path: Union[str, Path],
    domain: BuildDomain,
    schedule: ActivationSchedule = None,
) -> TemperatureHistory:
    raw = Path(path).read_bytes()
    if len(raw) < _HISTORY_HEADER.size:
        raise FormatError(f"{path}: truncated history header")
    magic, n_elem, n_snap = _HISTORY_HEADER.unpack_from(raw)
    if magic != HISTORY_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if n_elem != domain.element_count:
        raise FormatError(
            f"{path}: {n_elem} elements, domain has {domain.element_count}"
        )
    n_bits = math.ceil(n_elem / 8)
    record = 8 + 4 * n_elem + n_bits
    if len(raw) != _HISTORY_HEADER.size + n_snap * record:
        raise FormatError(f"{path}: payload size does not match {n_snap} snapshots")

    times = np.empty(n_snap, dtype=np.float64)
    temps = np.empty((n_snap, *domain.dims), dtype=np.float32)
    active = np.empty((n_snap, *domain.dims), dtype=bool)
    offset = _HISTORY_HEADER.size
    for s in range(n_snap):
        (times[s],) = struct.unpack_from("<d", raw, offset)
        offset += 8
        flat = np.frombuffer(raw, dtype="<f4", count=n_elem, offset=offset)
        temps[s] = flat.reshape(domain.dims, order="F")
        offset += 4 * n_elem
        bits = np.unpackbits(
            np.frombuffer(raw, dtype=np.uint8, count=n_bits, offset=offset),
            bitorder="little",
        )
        active[s] = bits[:n_elem].astype(bool).reshape(domain.dims, order="F")
        offset += n_bits
    if schedule is not None and len(schedule) + 1 != n_snap:
        raise FormatError(
            f"{path}: {n_snap} snapshots for a schedule of {len(schedule)} events"
        )
    return TemperatureHistory(times=times, temperatures=temps, active=active, schedule=schedule)


def peak_temperatures(history: TemperatureHistory) -> List[float]:
    """Peak active temperature per snapshot, for quick sanity summaries."""
    peaks = []
    for temps, act in zip(history.temperatures, history.active):
        peaks.append(float(temps[act].max()) if act.any() else float("nan"))
    return peaks
