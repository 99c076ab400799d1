"""Exception hierarchy for the ThermoForge pipeline.

Every module raises a subclass of ThermoForgeError so the command line can report
any pipeline failure uniformly. The neuralOp package keeps its own errors
(OperatorError, MetricError) because it does not depend on this package.
"""

from __future__ import annotations

from typing import Optional


class ThermoForgeError(Exception):
    """Base class for all pipeline errors."""


class GeometryError(ThermoForgeError):
    """Invalid voxel part or build domain."""


class ToolpathError(ThermoForgeError):
    """Toolpath cannot be planned or does not match its domain."""


class SimulationError(ThermoForgeError):
    """Thermal solver failure. Carries enough context to locate the bad step."""

    def __init__(
        self,
        message: str,
        step_index: Optional[int] = None,
        sub_step: Optional[int] = None,
        time: Optional[float] = None,
    ) -> None:
        self.step_index = step_index
        self.sub_step = sub_step
        self.time = time
        details = []
        if step_index is not None:
            details.append(f"event={step_index}")
        if sub_step is not None:
            details.append(f"sub_step={sub_step}")
        if time is not None:
            details.append(f"t={time:.6g}s")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class WindowError(ThermoForgeError):
    """Window extraction or dataset assembly failure."""


class FormatError(ThermoForgeError):
    """Malformed binary or text artifact: bad magic, version or truncated payload."""


class ConfigError(ThermoForgeError):
    """Run configuration value missing or out of range."""


class TrainingError(ThermoForgeError):
    """Training or evaluation cannot proceed, e.g. an empty split."""
