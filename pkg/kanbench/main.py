"""Main CLI entry point for kanbench."""

import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import yaml
from rich.logging import RichHandler

from kanbench import __version__
from kanbench.config import load_settings
from kanbench.data import load_dataset
from kanbench.errors import ConfigError, KanBenchError
from kanbench.experiments.engine import (
    ExperimentEngine,
    activation_sweep,
    degree_width_sweep,
    expand_grid,
    failed_or_diverged,
    matched_parameter_pairs,
    run_specs,
    scheme_sensitivity,
    select_best_record,
)
from kanbench.formatter import Formatter
from kanbench.metrics import twonn_intrinsic_dimension
from kanbench.models import Activation, ExperimentConfig, Family, ModelConfig, SelectionRule, Settings
from kanbench.plots import emit_plots
from kanbench.storage import ResultStore, load_records

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_FAILURE = 2

logger = logging.getLogger("kanbench")


def setup_logging(level: str) -> None:
    """Route the package logger through a single RichHandler."""
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = RichHandler(show_path=False, rich_tracebacks=True, markup=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level.upper())
    logger.propagate = False


def _int_list(value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'")


def _load(name: str) -> ExperimentConfig:
    return ExperimentEngine().load_experiment(name)


def _output_dir(cfg: ExperimentConfig, settings: Settings, output: Optional[str], suffix: str = "") -> Path:
    if output:
        return Path(output)
    if "output_dir" in cfg.model_fields_set:
        return Path(cfg.output_dir + suffix)
    return Path(settings.results_dir) / (cfg.name + suffix)


def _workers(cfg: ExperimentConfig, settings: Settings, workers: Optional[int]) -> int:
    if workers:
        return workers
    return cfg.workers if "workers" in cfg.model_fields_set else settings.workers


def _kan_base(cfg: ExperimentConfig) -> ModelConfig:
    for model in cfg.models:
        if model.family == Family.KAN:
            return model
    raise ConfigError(f"experiment '{cfg.name}' defines no KAN model to sweep")


def _finish(formatter: Formatter, records, store: ResultStore, plots: bool) -> None:
    if plots and records:
        emit_plots(records, store.figures_dir)
    formatter.format_success(f"{len(records)} runs written to {store.output_dir}")
    problems = failed_or_diverged(records)
    if problems:
        for record in problems:
            formatter.format_warning(f"{record.run_id}: {record.status}"
                                     + (f" ({record.error})" if record.error else ""))
        sys.exit(EXIT_PARTIAL_FAILURE)


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Show debug logging and extra columns")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, quiet: bool):
    """kanbench - benchmark Kolmogorov-Arnold Networks against Perceptron networks."""
    try:
        settings = load_settings()
    except ConfigError as e:
        Formatter().format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)
    level = "DEBUG" if verbose else "WARNING" if quiet else settings.log_level
    setup_logging(level)
    ctx.obj = {"settings": settings, "verbose": verbose, "quiet": quiet}


@cli.command()
@click.argument("experiment", required=True)
@click.option("--output", "-o", help="Output directory (defaults to the experiment's output_dir)")
@click.option("--workers", "-w", type=int, help="Parallel worker processes")
@click.option("--no-plots", is_flag=True, help="Skip SVG figures")
@click.option("--no-progress", is_flag=True, help="Hide the progress bar")
@click.option("--checkpoints", is_flag=True, help="Save a .npz checkpoint per completed run")
@click.pass_obj
def grid(obj, experiment: str, output: Optional[str], workers: Optional[int], no_plots: bool,
         no_progress: bool, checkpoints: bool):
    """Run the full training-scheme grid of an experiment file or template."""
    formatter = Formatter(verbose=obj["verbose"])
    try:
        cfg = _load(experiment)
        store = ResultStore(_output_dir(cfg, obj["settings"], output))
        specs = expand_grid(cfg)
        formatter.format_info(f"Experiment '{cfg.name}': {len(specs)} runs")
        records = run_specs(specs, _workers(cfg, obj["settings"], workers), store,
                            show_progress=not (no_progress or obj["quiet"]), save_checkpoints=checkpoints)
        formatter.format_records(records, title=cfg.name)
        _finish(formatter, records, store, not no_plots)
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)


@cli.command("sweep-degree")
@click.argument("experiment", required=True)
@click.option("--degrees", help="Comma-separated degrees (default from the experiment)")
@click.option("--widths", help="Comma-separated widths (default from the experiment)")
@click.option("--depths", help="Comma-separated hidden-layer counts")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", help="Output directory")
@click.option("--workers", "-w", type=int, help="Parallel worker processes")
@click.option("--no-plots", is_flag=True, help="Skip SVG figures")
@click.option("--no-progress", is_flag=True, help="Hide the progress bar")
@click.pass_obj
def sweep_degree(obj, experiment: str, degrees: Optional[str], widths: Optional[str], depths: Optional[str],
                 seed: int, output: Optional[str], workers: Optional[int], no_plots: bool, no_progress: bool):
    """Vary the KA unit degree and the hidden width of a single-hidden-layer KAN."""
    formatter = Formatter(verbose=obj["verbose"])
    try:
        cfg = _load(experiment)
        sweep = cfg.sweep
        store = ResultStore(_output_dir(cfg, obj["settings"], output, "-degree-sweep"))
        records = degree_width_sweep(
            _kan_base(cfg),
            _int_list(degrees) or sweep.degrees,
            _int_list(widths) or sweep.widths,
            sweep.scheme,
            cfg.dataset,
            seed=seed,
            depths=_int_list(depths) or sweep.depths,
            workers=_workers(cfg, obj["settings"], workers),
            store=store,
            show_progress=not (no_progress or obj["quiet"]),
        )
        formatter.format_records(records, title=f"{cfg.name}: degree vs. width")
        formatter.format_pairs(matched_parameter_pairs(records))
        _finish(formatter, records, store, not no_plots)
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)


@cli.command("sweep-activation")
@click.argument("experiment", required=True)
@click.option("--from", "from_dir", help="Results of a previous grid used to pick the best scheme")
@click.option("--rule", type=click.Choice([r.value for r in SelectionRule]), default=SelectionRule.MAX_ACCURACY.value,
              show_default=True, help="How the best scheme is chosen")
@click.option("--activations", help="Comma-separated activations (default from the experiment)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", help="Output directory")
@click.option("--workers", "-w", type=int, help="Parallel worker processes")
@click.option("--no-plots", is_flag=True, help="Skip SVG figures")
@click.option("--no-progress", is_flag=True, help="Hide the progress bar")
@click.pass_obj
def sweep_activation(obj, experiment: str, from_dir: Optional[str], rule: str, activations: Optional[str],
                     seed: int, output: Optional[str], workers: Optional[int], no_plots: bool, no_progress: bool):
    """Re-train the experiment's KAN under its best scheme with each activation."""
    formatter = Formatter(verbose=obj["verbose"])
    try:
        cfg = _load(experiment)
        base = _kan_base(cfg)
        if from_dir:
            best = select_best_record(load_records(from_dir), SelectionRule(rule), family=Family.KAN,
                                      dataset=cfg.dataset.display_name)
            scheme = best.scheme
            formatter.format_info(f"Best scheme ({rule}) from {best.run_id}: {scheme.label}")
        else:
            scheme = cfg.sweep.scheme
            formatter.format_info(f"No prior results given; using the experiment's sweep scheme {scheme.label}")
        try:
            chosen = [Activation(a.strip()) for a in activations.split(",")] if activations else cfg.sweep.activations
        except ValueError as e:
            raise ConfigError(str(e)) from e

        store = ResultStore(_output_dir(cfg, obj["settings"], output, "-activation-sweep"))
        records = activation_sweep(scheme, base, cfg.dataset, chosen, seed=seed,
                                   workers=_workers(cfg, obj["settings"], workers), store=store,
                                   show_progress=not (no_progress or obj["quiet"]))
        formatter.format_activation_ranking(records)
        _finish(formatter, records, store, not no_plots)
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)


@cli.command()
@click.argument("results", required=True, type=click.Path(exists=True))
@click.option("--output", "-o", help="Directory for the summary CSV and figures (default: next to the results)")
@click.option("--no-plots", is_flag=True, help="Skip SVG figures")
@click.option("--rule", type=click.Choice([r.value for r in SelectionRule]), default=SelectionRule.MAX_ACCURACY.value,
              show_default=True, help="How the best scheme per model is chosen")
@click.pass_obj
def report(obj, results: str, output: Optional[str], no_plots: bool, rule: str):
    """Summarize a results directory or runs.jsonl file as tables, CSV and SVG."""
    formatter = Formatter(verbose=obj["verbose"])
    try:
        records = load_records(results)
        if not records:
            formatter.format_info("No runs found.")
            return
        results_path = Path(results)
        store = ResultStore(output or (results_path if results_path.is_dir() else results_path.parent))
        written = [store.write_summary(records)]
        if not no_plots:
            written.extend(emit_plots(records, store.figures_dir))

        formatter.format_records(records)
        best = {}
        for key in sorted({(r.dataset, r.model_label) for r in records if r.ok}):
            subset = [r for r in records if (r.dataset, r.model_label) == key]
            try:
                best[key] = select_best_record(subset, SelectionRule(rule))
            except ConfigError:
                continue
        if best:
            formatter.format_best_schemes(best)
        formatter.format_sensitivity(scheme_sensitivity(records))
        if any(r.tags.get("sweep_axis") == "degree" for r in records):
            formatter.format_pairs(matched_parameter_pairs(records))
        if any(r.tags.get("sweep_axis") == "activation" for r in records):
            formatter.format_activation_ranking(records)
        formatter.format_success(f"Report written to {store.output_dir}")
        formatter.format_paths(written)
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)


@cli.command("id-estimate")
@click.argument("experiment", required=True)
@click.option("--split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--method", type=click.Choice(["mle", "regression"]), default="mle", show_default=True)
@click.pass_obj
def id_estimate(obj, experiment: str, split: str, method: str):
    """Print the TwoNN intrinsic dimension of an experiment's dataset."""
    formatter = Formatter(verbose=obj["verbose"])
    try:
        cfg = _load(experiment)
        train, test = load_dataset(cfg.dataset)
        ds = test if split == "test" else train
        value = twonn_intrinsic_dimension(ds.features, method=method)
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)
    formatter.format_info(f"{cfg.dataset.display_name} ({split}, {len(ds)} points, d={ds.dim})")
    click.echo(f"{value:.4f}")


@cli.group()
def experiment():
    """Experiment definition commands."""
    pass


@experiment.command("list")
def experiment_list():
    """List bundled templates and user experiments."""
    formatter = Formatter()
    try:
        formatter.format_experiment_list(ExperimentEngine().list_experiments())
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)


@experiment.command("show")
@click.argument("name", required=True)
def experiment_show(name: str):
    """Show a fully resolved experiment definition."""
    formatter = Formatter()
    try:
        formatter.format_experiment(_load(name))
    except KanBenchError as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)


@experiment.command("create")
@click.argument("name", required=True)
@click.option("--from-template", "-t", "template_name", default="blobs-grid", show_default=True,
              help="Template to copy")
def experiment_create(name: str, template_name: str):
    """Copy a template into the user experiments directory for editing."""
    formatter = Formatter()
    engine = ExperimentEngine()
    user_path = engine.user_dir / f"{name}.yaml"
    if user_path.exists():
        formatter.format_error(f"Experiment '{name}' already exists at {user_path}")
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        template = engine.load_experiment(template_name)
        data = template.model_dump(mode="json", exclude_defaults=True)
        data.update({"version": template.version, "name": name,
                     "description": f"Custom experiment based on {template_name}"})
        user_path.parent.mkdir(parents=True, exist_ok=True)
        with open(user_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
    except (KanBenchError, OSError) as e:
        formatter.format_error(str(e))
        sys.exit(EXIT_CONFIG_ERROR)
    formatter.format_success(f"Experiment '{name}' created from template '{template_name}'")
    formatter.format_info(f"Location: {user_path}")


def main(argv: Optional[Sequence[str]] = None) -> None:
    cli.main(args=argv, prog_name="kanbench")


if __name__ == "__main__":
    main()
