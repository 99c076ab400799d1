"""Window-level fit metrics: NL2 (the training loss), MSE, NRMSE and R^2, plus their
aggregation over many windows.

Every metric takes an optional boolean mask; only masked-in voxels are scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

DEGENERATE_TOL = 1e-12
PERCENT_ERROR_BAND = 0.03


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


def _select(pred, truth, mask) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if mask is None:
        return pred.ravel(), truth.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != truth.shape:
        raise MetricError(f"mask shape {mask.shape} != truth shape {truth.shape}")
    return pred[mask], truth[mask]


def _nonzero_truth(truth: np.ndarray, name: str) -> None:
    if len(truth) == 0:
        raise MetricError(f"{name}: mask selects no voxels")
    if np.any(truth == 0):
        raise MetricError(f"{name}: ground truth is zero at a scored voxel")


def nl2(pred, truth, mask=None) -> float:
    """Sum over voxels of |pred - truth| / |truth|."""
    p, t = _select(pred, truth, mask)
    _nonzero_truth(t, "nl2")
    return float(np.sum(np.abs(p - t) / np.abs(t)))


def mse(pred, truth, mask=None) -> float:
    p, t = _select(pred, truth, mask)
    if len(t) == 0:
        raise MetricError("mse: mask selects no voxels")
    return float(np.mean((p - t) ** 2))


def nrmse(pred, truth, mask=None) -> float:
    """Root mean square of the relative error."""
    p, t = _select(pred, truth, mask)
    _nonzero_truth(t, "nrmse")
    return float(np.sqrt(np.mean(((p - t) / t) ** 2)))


def r2_checked(pred, truth, mask=None) -> Tuple[float, bool]:
    """R^2 and a degenerate flag. A window without variance scores 1 when it is
    predicted exactly and is otherwise flagged (value NaN)."""
    p, t = _select(pred, truth, mask)
    if len(t) < 2:
        raise MetricError("r2: needs at least two scored voxels")
    sse = float(np.sum((p - t) ** 2))
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst < DEGENERATE_TOL:
        if sse < DEGENERATE_TOL:
            return 1.0, False
        return math.nan, True
    return 1.0 - sse / sst, False


def r2(pred, truth, mask=None) -> float:
    return r2_checked(pred, truth, mask)[0]


def percent_error_share(pred, truth, mask=None, band: float = PERCENT_ERROR_BAND) -> float:
    """Share of scored voxels whose relative error is within `band`."""
    p, t = _select(pred, truth, mask)
    _nonzero_truth(t, "percent_error_share")
    return float(np.mean(np.abs(p - t) / np.abs(t) <= band))


@dataclass(frozen=True)
class WindowScore:
    mse: float
    nrmse: float
    nl2: float
    r2: float
    n_scored: int
    degenerate: bool = False
    within_band: float = 1.0


def score_window(pred, truth, mask=None) -> WindowScore:
    p, t = _select(pred, truth, mask)
    r2_value, degenerate = r2_checked(p, t)
    return WindowScore(
        mse=mse(p, t),
        nrmse=nrmse(p, t),
        nl2=nl2(p, t),
        r2=r2_value,
        n_scored=len(t),
        degenerate=degenerate,
        within_band=percent_error_share(p, t),
    )


@dataclass(frozen=True)
class AggregateReport:
    """Means over windows and the k worst windows by R^2 (ascending).
    Degenerate windows are left out of mean_r2 and the worst list."""

    mean_mse: float
    mean_nrmse: float
    mean_nl2: float
    mean_r2: float
    n_windows: int
    n_degenerate: int
    mean_within_band: float = 1.0
    worst: List[Tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Plain mapping for reports; an undefined mean R^2 becomes None."""
        return json_safe(
            {
                "mean_mse": self.mean_mse,
                "mean_nrmse": self.mean_nrmse,
                "mean_nl2": self.mean_nl2,
                "mean_r2": self.mean_r2,
                "mean_within_3pct": self.mean_within_band,
                "n_windows": self.n_windows,
                "n_degenerate": self.n_degenerate,
                "worst": [{"window": w, "r2": r} for w, r in self.worst],
            }
        )


def aggregate(
    scores: Sequence[WindowScore], k: int = 10, ids: Optional[Sequence[str]] = None
) -> AggregateReport:
    if not scores:
        raise MetricError("aggregate needs at least one window score")
    if ids is None:
        ids = [str(n) for n in range(len(scores))]
    valid = [(wid, s.r2) for wid, s in zip(ids, scores) if not s.degenerate]
    worst = sorted(valid, key=lambda item: (item[1], item[0]))[: max(k, 0)]
    return AggregateReport(
        mean_mse=float(np.mean([s.mse for s in scores])),
        mean_nrmse=float(np.mean([s.nrmse for s in scores])),
        mean_nl2=float(np.mean([s.nl2 for s in scores])),
        mean_r2=float(np.mean([r for _, r in valid])) if valid else math.nan,
        n_windows=len(scores),
        n_degenerate=len(scores) - len(valid),
        mean_within_band=float(np.mean([s.within_band for s in scores])),
        worst=worst,
    )


def json_safe(value):
    """Replace NaN and infinities by None, through nested dicts, lists and tuples.

    Undefined metrics (R^2 of a degenerate window) are written as JSON null.
    """
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value
