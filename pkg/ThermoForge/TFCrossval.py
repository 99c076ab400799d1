"""Leave-one-geometry-out cross-validation over procedurally generated parts.

Every geometry is simulated and windowed once. Fold n holds out geometry n, pools the
windows of all others, trains with a seeded 90/10 split and scores the held-out
geometry's full window set. A failing fold is recorded in the report and the
remaining folds still run.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Dict, List, Mapping, Optional, Tuple

from neuralOp.fitMetrics import MetricError, json_safe
from neuralOp.fourierOps import OperatorError
from neuralOp.operatorModel import FnoHyperParams, init_model

from .TFConfig import GeometrySpec, RunConfig
from .TFErrors import ConfigError, ThermoForgeError, TrainingError
from .TFGeometry import BuildDomain, attach_substrate, generate_shape
from .TFMaterial import MaterialModel, material_from_config
from .TFThermal import TemperatureHistory, simulate
from .TFToolpath import plan_zigzag
from .TFTraining import evaluate, train
from .TFWindows import N_INPUT, WindowDataset, extract_windows, sample_events, window_table

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1


def build_domain(spec: GeometrySpec, config: RunConfig) -> BuildDomain:
    p = config.process
    part = generate_shape(spec.seed, spec.family, spec.dims, p.element_size)
    return attach_substrate(part, p.substrate_layers, p.ambient_T, p.dirichlet_T)


def material_for(config: RunConfig) -> MaterialModel:
    p = config.process
    return material_from_config(config.material.as_overrides(), p.activation_T, p.ambient_T)


def simulate_geometry(
    spec: GeometrySpec, config: RunConfig
) -> Tuple[BuildDomain, TemperatureHistory]:
    domain = build_domain(spec, config)
    schedule = plan_zigzag(domain, config.process.tool_speed)
    return domain, simulate(domain, schedule, material_for(config))


def geometry_dataset(geometry_id: int, spec: GeometrySpec, config: RunConfig) -> WindowDataset:
    """Simulate one geometry and cut its windows, subsampling events when the
    configuration caps the number of windows per geometry."""
    p = config.process
    domain, history = simulate_geometry(spec, config)
    events = sample_events(
        len(history.schedule), p.max_windows, p.k_recent, seed=config.seed + geometry_id
    )
    return extract_windows(
        history,
        domain,
        k_recent=p.k_recent,
        edge=p.window_edge,
        geometry_id=geometry_id,
        events=events,
        activation_T=p.activation_T,
        alpha_p=float(material_for(config).diffusivity(p.activation_T)),
    )


def build_datasets(config: RunConfig) -> Dict[int, WindowDataset]:
    return {
        gid: geometry_dataset(gid, spec, config) for gid, spec in enumerate(config.geometries)
    }


def hyper_params(config: RunConfig) -> FnoHyperParams:
    f = config.fno
    return FnoHyperParams(
        d_a=N_INPUT, d_v=f.d_v, d_u=1, depth=f.depth, modes=f.modes, activation=f.activation
    )


@dataclass
class FoldResult:
    fold: int
    held_out: int
    train_geometries: List[int]
    status: str = "ok"
    error: Optional[str] = None
    train_windows: int = 0
    test_windows: int = 0
    validation_windows: int = 0
    final: Dict = field(default_factory=dict)
    validation: Dict = field(default_factory=dict)
    curves: List[Dict] = field(default_factory=list)


@dataclass
class CrossvalReport:
    folds: List[FoldResult]
    windows: List[Dict]
    config: Dict = field(default_factory=dict)

    def to_mapping(self) -> Dict:
        return {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "windows": self.windows,
            "folds": [asdict(f) for f in self.folds],
        }

    def to_json(self) -> str:
        """Deterministic text form: sorted keys, no timestamps."""
        data = json_safe(self.to_mapping())
        return json.dumps(data, indent=2, sort_keys=True, allow_nan=False)

    def validation_table(self) -> List[Dict]:
        """Held-out geometry with its validation MSE and R^2, one row per fold."""
        return [
            {
                "held_out": f.held_out,
                "status": f.status,
                "mse": f.validation.get("mean_mse"),
                "r2": f.validation.get("mean_r2"),
            }
            for f in self.folds
        ]


def audit_leakage(
    folds: List[FoldResult], datasets: Optional[Mapping[int, WindowDataset]] = None
) -> List[str]:
    """Folds whose training pool touches their held-out geometry. Empty when clean."""
    problems = []
    for fold in folds:
        if fold.held_out in fold.train_geometries:
            problems.append(f"fold {fold.fold}: held-out geometry {fold.held_out} in pool")
        if datasets is not None:
            for gid in fold.train_geometries:
                ids = set(datasets[gid].geometry_ids.tolist())
                if fold.held_out in ids:
                    problems.append(
                        f"fold {fold.fold}: dataset {gid} carries windows of {fold.held_out}"
                    )
    return problems


def run_fold(
    fold_spec: Tuple[int, int], datasets: Mapping[int, WindowDataset], config: RunConfig
) -> FoldResult:
    fold, held_out = fold_spec
    pool_ids = sorted(gid for gid in datasets if gid != held_out)
    result = FoldResult(fold=fold, held_out=held_out, train_geometries=pool_ids)
    t = config.train
    try:
        pool = WindowDataset.concat([datasets[gid] for gid in pool_ids])
        if len(pool) == 0:
            raise TrainingError(f"fold {fold} has no training windows")
        model = init_model(hyper_params(config), seed=t.init_seed)
        trained = train(
            model,
            pool,
            epochs=t.epochs,
            batch_size=t.batch_size,
            split_seed=t.split_seed,
            lr=t.lr,
            weight_decay=t.weight_decay,
            test_fraction=t.test_fraction,
        )
        validation = evaluate(
            trained.model,
            datasets[held_out],
            trained.normalization,
            t.batch_size,
            k=t.worst_k,
        )
    except (ThermoForgeError, OperatorError, MetricError) as err:
        logger.warning("fold %d (held out %d) failed: %s", fold, held_out, err)
        result.status = "failed"
        result.error = f"{type(err).__name__}: {err}"
        return result

    result.train_windows = len(trained.train_indices)
    result.test_windows = len(trained.test_indices)
    result.validation_windows = len(datasets[held_out])
    result.curves = [asdict(row) for row in trained.history]
    result.final = dict(result.curves[-1])
    result.validation = validation.report.to_dict()
    logger.info(
        "fold %d held out %d: validation mse %.4g r2 %.5f",
        fold,
        held_out,
        validation.report.mean_mse,
        validation.report.mean_r2,
    )
    return result


def crossval(
    config: RunConfig, datasets: Optional[Mapping[int, WindowDataset]] = None
) -> CrossvalReport:
    """One fold per geometry. Folds run in a process pool when more than one thread
    is allowed and determinism is not requested."""
    config.validate()
    if len(config.geometries) < 2:
        raise ConfigError("geometries: cross-validation needs at least two geometries")
    if datasets is None:
        datasets = build_datasets(config)
    if sorted(datasets) != list(range(len(config.geometries))):
        raise TrainingError("datasets must be keyed by geometry index")

    fold_specs = [(fold, gid) for fold, gid in enumerate(sorted(datasets))]
    worker = partial(run_fold, datasets=datasets, config=config)
    if config.threads > 1 and not config.deterministic:
        with multiprocessing.Pool(min(config.threads, len(fold_specs))) as pool:
            folds = pool.map(worker, fold_specs)
    else:
        folds = [worker(spec) for spec in fold_specs]

    problems = audit_leakage(folds, datasets)
    if problems:
        raise TrainingError("; ".join(problems))
    failed = sum(f.status != "ok" for f in folds)
    if failed:
        logger.warning("%d of %d folds failed", failed, len(folds))
    return CrossvalReport(
        folds=folds, windows=window_table(dict(datasets)), config=config.to_mapping()
    )
