"""Command-line surface: one click group, one subcommand per pipeline stage.

    thermoforge generate --seed 7 --family carved --dims 20 20 20 --out part.vox
    thermoforge path     --domain part.vox --out part.path
    thermoforge simulate --domain part.vox --toolpath part.path --out part.thist
    thermoforge extract  --domain part.vox --toolpath part.path --history part.thist --out part.amwin
    thermoforge train    --dataset part.amwin --out model.fno
    thermoforge evaluate --checkpoint model.fno --dataset other.amwin --out report.json
    thermoforge crossval --config run.json --out runs/
"""

import logging
import os
import sys
from functools import wraps
from pathlib import Path

import click

from neuralOp.fitMetrics import MetricError
from neuralOp.fourierOps import OperatorError
from neuralOp.operatorModel import init_model
from ThermoForge import TFGeometry as geo
from ThermoForge import TFThermal as thermal
from ThermoForge import TFToolpath as toolpath
from ThermoForge import TFWindows as windows
from ThermoForge.TFConfig import RunConfig, desk_config, load_config
from ThermoForge.TFCrossval import crossval, hyper_params, material_for
from ThermoForge.TFErrors import ThermoForgeError
from ThermoForge.TFTraining import evaluate, load_checkpoint, save_checkpoint, train
from .ResultFiles import evaluation_report, write_crossval, write_curves, write_json
from .TFCliConstants import *

logger = logging.getLogger(__name__)


def configure_logging():
    name = os.environ.get(LOG_ENV_VAR, DEFAULT_LOG_LEVEL).strip().lower()
    level = LOG_LEVELS.get(name)
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_thermoforge", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._thermoforge = True
    root.addHandler(handler)
    root.setLevel(level or LOG_LEVELS[DEFAULT_LOG_LEVEL])
    if level is None:
        logger.warning("unknown %s value %r, using %s", LOG_ENV_VAR, name, DEFAULT_LOG_LEVEL)


def structured_errors(command):
    """Turn library errors into `error: <Class>: <message>` and exit status 1."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ThermoForgeError, OperatorError, MetricError) as err:
            click.echo(f"error: {type(err).__name__}: {err}", err=True)
            sys.exit(EXIT_ERROR)

    return wrapper


def _config(path, seed=None, deterministic=None, threads=None, out=None) -> RunConfig:
    config = load_config(path) if path else RunConfig()
    return config.with_overrides(
        seed=seed, deterministic=deterministic or None, threads=threads, out_dir=out
    )


def _domain(part_path, substrate, config: RunConfig) -> geo.BuildDomain:
    p = config.process
    layers = substrate if substrate is not None else p.substrate_layers
    return geo.attach_substrate(geo.load_part(part_path), layers, p.ambient_T, p.dirichlet_T)


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None
)
seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None)
domain_option = click.option(
    "--domain", "part_path", type=click.Path(exists=True, dir_okay=False), required=True
)
substrate_option = click.option("--substrate", type=click.IntRange(min=1), default=None)
out_option = click.option("--out", type=click.Path(), required=True)


@click.group()
def cli():
    """Thermal simulation, window extraction and neural-operator training for
    directed-energy-deposition parts."""


@cli.command()
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option(
    "--family", type=click.Choice(list(geo.ShapeFamily.__members__)), default=DEFAULT_FAMILY
)
@click.option("--dims", type=int, nargs=3, default=DEFAULT_DIMS, show_default=True)
@click.option("--element-size", type=float, default=None, help="mm; default 40/max(dims)")
@out_option
@structured_errors
def generate(seed, family, dims, element_size, out):
    """Generate a procedural part and write it as a voxel part file."""
    part = geo.generate_shape(seed, family, dims, element_size)
    geo.save_part(part, out)
    click.echo(f"{out}: {family} part {dims}, {part.voxel_count} voxels")


@cli.command()
@domain_option
@substrate_option
@click.option(
    "--tool-speed", type=float, default=toolpath.DEFAULT_TOOL_SPEED, show_default=True
)
@out_option
@structured_errors
def path(part_path, substrate, tool_speed, out):
    """Plan the zigzag toolpath of a part."""
    domain = _domain(part_path, substrate, RunConfig())
    schedule = toolpath.plan_zigzag(domain, tool_speed)
    toolpath.save_toolpath(schedule, out)
    stats = toolpath.schedule_stats(schedule)
    click.echo(f"{out}: {stats.count} events, dt={stats.dt:.4g}s, {stats.duration:.4g}s")


@cli.command()
@domain_option
@click.option("--toolpath", "toolpath_path", type=click.Path(exists=True), required=True)
@substrate_option
@config_option
@out_option
@structured_errors
def simulate(part_path, toolpath_path, substrate, config_path, out):
    """Run the thermal simulation and write the temperature history."""
    config = _config(config_path)
    domain = _domain(part_path, substrate, config)
    schedule = toolpath.load_toolpath(toolpath_path)
    history = thermal.simulate(domain, schedule, material_for(config))
    thermal.save_history(history, out)
    peak = max(thermal.peak_temperatures(history))
    click.echo(f"{out}: {len(history)} snapshots, peak {peak:.1f}C")


@cli.command()
@domain_option
@click.option("--toolpath", "toolpath_path", type=click.Path(exists=True), required=True)
@click.option("--history", "history_path", type=click.Path(exists=True), required=True)
@substrate_option
@config_option
@seed_option
@click.option("--geometry-id", type=click.IntRange(min=0), default=0, show_default=True)
@out_option
@structured_errors
def extract(
    part_path, toolpath_path, history_path, substrate, config_path, seed, geometry_id, out
):
    """Cut heat-affected windows from a history into a dataset file."""
    config = _config(config_path, seed=seed)
    p = config.process
    domain = _domain(part_path, substrate, config)
    schedule = toolpath.load_toolpath(toolpath_path)
    history = thermal.load_history(history_path, domain, schedule)
    events = windows.sample_events(
        len(schedule), p.max_windows, p.k_recent, seed=config.seed + geometry_id
    )
    dataset = windows.extract_windows(
        history,
        domain,
        k_recent=p.k_recent,
        edge=p.window_edge,
        geometry_id=geometry_id,
        events=events,
        activation_T=p.activation_T,
        alpha_p=float(material_for(config).diffusivity(p.activation_T)),
    )
    windows.save_dataset(dataset, out)
    click.echo(f"{out}: {len(dataset)} windows")


@cli.command(name="train")
@click.option(
    "--dataset", "dataset_paths", type=click.Path(exists=True), multiple=True, required=True
)
@config_option
@seed_option
@out_option
@click.option("--emit-plots", is_flag=True, help="Write per-epoch metric curves as CSV.")
@structured_errors
def train_cmd(dataset_paths, config_path, seed, out, emit_plots):
    """Train a surrogate on one or more window datasets and write a checkpoint."""
    config = _config(config_path, seed=seed)
    t = config.train
    dataset = windows.WindowDataset.concat([windows.load_dataset(p) for p in dataset_paths])
    model = init_model(hyper_params(config), seed=t.init_seed)
    result = train(
        model,
        dataset,
        epochs=t.epochs,
        batch_size=t.batch_size,
        split_seed=t.split_seed,
        lr=t.lr,
        weight_decay=t.weight_decay,
        test_fraction=t.test_fraction,
    )
    save_checkpoint(result.model, out, result.normalization, result.settings)
    if emit_plots:
        write_curves(result.history, Path(out).with_suffix(CURVES_SUFFIX))
    last = result.history[-1]
    click.echo(
        f"{out}: test mse {last.test_mse:.4g}, nl2 {last.test_nl2:.4g}, r2 {last.test_r2:.5f}"
    )


@cli.command(name="evaluate")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--worst", type=click.IntRange(min=0), default=7, show_default=True)
@click.option("--per-window", is_flag=True, help="Include every window's scores.")
@out_option
@structured_errors
def evaluate_cmd(checkpoint_path, dataset_path, worst, per_window, out):
    """Score a checkpoint against a dataset and write a metrics report."""
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = windows.load_dataset(dataset_path)
    result = evaluate(checkpoint.model, dataset, checkpoint.normalization, k=worst)
    metadata = {
        "checkpoint": str(checkpoint_path),
        "dataset": str(dataset_path),
        "provenance": dataset.provenance,
        "training": checkpoint.training,
    }
    report = evaluation_report(
        result.report,
        metadata,
        result.scores if per_window else None,
        dataset.window_ids() if per_window else None,
    )
    write_json(report, out)
    click.echo(f"{out}: mse {result.report.mean_mse:.4g}, r2 {result.report.mean_r2:.5f}")


@cli.command(name="crossval")
@config_option
@seed_option
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--deterministic", is_flag=True, help="Run folds serially.")
@click.option("--threads", type=click.IntRange(min=1), default=None)
@click.option("--emit-plots", is_flag=True, help="Write per-fold metric curves as CSV.")
@structured_errors
def crossval_cmd(config_path, seed, out, deterministic, threads, emit_plots):
    """Leave-one-geometry-out cross-validation; writes crossval_report.json."""
    base = load_config(config_path) if config_path else desk_config()
    config = base.with_overrides(
        seed=seed, deterministic=deterministic or None, threads=threads, out_dir=out
    )
    report = crossval(config)
    written = write_crossval(report, config.paths.out_dir, emit_plots)
    for row in report.validation_table():
        click.echo(
            f"geometry {row['held_out']}: {row['status']} mse {row['mse']} r2 {row['r2']}"
        )
    click.echo(f"{written[0]}: {len(report.folds)} folds")


def main():
    configure_logging()
    cli(prog_name="thermoforge")
