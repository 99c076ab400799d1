"""Report JSON and metric-curve CSV files written by the command line."""

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Union

from neuralOp.fitMetrics import json_safe
from ThermoForge.TFCrossval import CrossvalReport
from ThermoForge.TFTraining import EpochMetrics
from .TFCliConstants import *


def write_json(data: Mapping, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(json_safe(data), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text, encoding="utf-8")
    return path


def curve_rows(history: Iterable[Union[EpochMetrics, Dict]]) -> List[Dict]:
    rows = []
    for row in history:
        values = row if isinstance(row, dict) else row.__dict__
        rows.append({col: values[col] for col in CURVE_COLUMNS})
    return rows


def write_curves(history: Iterable[Union[EpochMetrics, Dict]], path: Union[str, Path]) -> Path:
    """Per-epoch train/test metrics, one row per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(CURVE_COLUMNS), lineterminator="\n")
        writer.writeheader()
        writer.writerows(curve_rows(history))
    return path


def write_crossval(
    report: CrossvalReport, out_dir: Union[str, Path], emit_plots: bool = False
) -> List[Path]:
    """The report itself plus, on request, one curve file per successful fold."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / REPORT_NAME]
    written[0].write_text(report.to_json(), encoding="utf-8")
    if emit_plots:
        for fold in report.folds:
            if fold.curves:
                name = f"fold{fold.fold}_geometry{fold.held_out}{CURVES_SUFFIX}"
                written.append(write_curves(fold.curves, out_dir / name))
    return written


def evaluation_report(report, metadata: Mapping, scores=None, ids=None) -> Dict:
    """Aggregate metrics, worst windows and run metadata, optionally per window."""
    data = {"aggregate": report.to_dict(), "metadata": dict(metadata)}
    if scores is not None:
        data["windows"] = [
            {"window": wid, **score.__dict__} for wid, score in zip(ids, scores)
        ]
    return data
