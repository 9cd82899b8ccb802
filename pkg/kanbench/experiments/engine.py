"""Experiment engine for kanbench: grid expansion, run execution and sweeps."""

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeRemainingColumn

from kanbench.config import get_config_dir, load_experiment
from kanbench.data import Dataset, load_dataset
from kanbench.errors import ConfigError, EstimationError, KanBenchError
from kanbench.hsic import train_hsic
from kanbench.metrics import efficiency, generalization_gap, twonn_intrinsic_dimension
from kanbench.models import (
    Activation,
    DatasetSpec,
    EfficiencyInputs,
    ExperimentConfig,
    Family,
    ModelConfig,
    RunRecord,
    RunSpec,
    SelectionRule,
    TrainerKind,
    TrainingScheme,
)
from kanbench.nn import build_model, save_checkpoint
from kanbench.storage import ResultStore
from kanbench.trainer import TrainingHistory, train_backprop

logger = logging.getLogger(__name__)

DEFAULT_SWEEP_ACTIVATIONS = [Activation.GELU, Activation.SILU, Activation.ELU]

_DATASETS: Dict[str, Tuple[Dataset, Dataset]] = {}


class ExperimentEngine:
    """Finds, loads and lists experiment definitions."""

    def __init__(self, config_dir: Optional[Path] = None):
        self.config_dir = Path(config_dir) if config_dir is not None else get_config_dir()
        self.user_dir = self.config_dir / "experiments"
        self.package_templates_dir = Path(__file__).parent / "templates"

    def get_template_paths(self) -> List[Path]:
        """Bundled templates first, then user experiments, each sorted by name."""
        paths = []
        if self.package_templates_dir.exists():
            paths.extend(sorted(self.package_templates_dir.glob("*.yaml")))
        if self.user_dir.exists():
            paths.extend(sorted(self.user_dir.glob("*.yaml")))
        return paths

    def find(self, name: str) -> Optional[Path]:
        """Resolve a file path or an experiment name; user experiments shadow templates."""
        candidate = Path(name).expanduser()
        if candidate.suffix in (".yaml", ".yml") and candidate.exists():
            return candidate
        for directory in (self.user_dir, self.package_templates_dir):
            path = directory / f"{name}.yaml"
            if path.exists():
                return path
        return None

    def load_experiment(self, name: str) -> ExperimentConfig:
        path = self.find(name)
        if path is None:
            raise ConfigError(f"experiment '{name}' not found (no such file or template)")
        return load_experiment(path)

    def list_experiments(self) -> Dict[str, Dict[str, Any]]:
        """Map experiment name -> {experiment, source, path}; unreadable files are skipped."""
        experiments: Dict[str, Dict[str, Any]] = {}
        for path in self.get_template_paths():
            try:
                experiment = load_experiment(path)
            except ConfigError as e:
                logger.warning("Skipping %s: %s", path, e)
                continue
            source = "user" if path.parent == self.user_dir else "template"
            experiments[experiment.name] = {"experiment": experiment, "source": source, "path": str(path)}
        return experiments


# Grid expansion ------------------------------------------------------------

def _run_id(index: int, model: ModelConfig, scheme: TrainingScheme, seed: int,
            tags: Optional[Dict[str, Any]] = None) -> str:
    parts = [f"{index:04d}", model.family.value, model.size_class.value]
    if tags:
        parts.extend(f"{key}{value}" for key, value in sorted(tags.items()) if key not in ("sweep_axis", "partner"))
    parts.extend([scheme.initialization.value, scheme.optimizer.value, f"lr{scheme.lr:g}", f"s{seed}"])
    return "-".join(parts)


def expand_grid(cfg: ExperimentConfig) -> List[RunSpec]:
    """Cartesian product models x initializations x optimizers x learning rates x seeds."""
    axes = {
        "models": cfg.models,
        "grid.initializations": cfg.grid.initializations,
        "grid.optimizers": cfg.grid.optimizers,
        "grid.learning_rates": cfg.grid.learning_rates,
        "seeds": cfg.seeds,
    }
    empty = [name for name, values in axes.items() if not values]
    if empty:
        raise ConfigError(f"empty grid axis: {', '.join(empty)}")

    specs = []
    for index, (model, init, optimizer, lr, seed) in enumerate(itertools.product(*axes.values())):
        scheme = TrainingScheme(
            initialization=init,
            optimizer=optimizer,
            lr=lr,
            batch_size=cfg.grid.batch_size,
            max_epochs=cfg.grid.max_epochs,
            trainer=cfg.trainer,
        )
        specs.append(RunSpec(
            index=index,
            run_id=_run_id(index, model, scheme, seed),
            dataset=cfg.dataset,
            model=model,
            scheme=scheme,
            seed=seed,
            hsic=cfg.hsic,
            intrinsic_dimension=cfg.intrinsic_dimension,
        ))
    return specs


# Run execution -------------------------------------------------------------

def get_dataset(spec: DatasetSpec) -> Tuple[Dataset, Dataset]:
    """Load a dataset once per process."""
    key = spec.model_dump_json()
    if key not in _DATASETS:
        _DATASETS[key] = load_dataset(spec)
    return _DATASETS[key]


def estimate_intrinsic_dimension(test: Dataset) -> Optional[float]:
    try:
        return twonn_intrinsic_dimension(test.features)
    except EstimationError as e:
        logger.warning("Intrinsic dimension unavailable for %s: %s", test.name, e)
        return None


def _base_record(spec: RunSpec, dataset_name: str, model: ModelConfig) -> Dict[str, Any]:
    is_kan = model.family == Family.KAN
    return dict(
        run_id=spec.run_id,
        dataset=dataset_name,
        family=model.family,
        size_class=model.size_class,
        widths=model.resolved_widths(),
        degree=model.degree if is_kan else None,
        grid_size=model.grid_size if is_kan else None,
        activation=model.resolved_activation(),
        scheme=spec.scheme,
        seed=spec.seed,
        tags=spec.tags,
        intrinsic_dimension=spec.intrinsic_dimension,
    )


def record_from_history(
    spec: RunSpec,
    dataset_name: str,
    model: ModelConfig,
    history: TrainingHistory,
    param_count: int,
    wall_seconds: float,
) -> RunRecord:
    """Derive A*, E*, gaps and EF from a training history."""
    fields = _base_record(spec, dataset_name, model)
    best_epoch = history.best_epoch
    best_accuracy = history.best_accuracy
    gap_at_best = final_gap = ef = None
    if best_epoch is not None:
        gap_at_best = generalization_gap(history.train_accuracy[best_epoch], history.test_accuracy[best_epoch])
        final_gap = generalization_gap(history.train_accuracy[-1], history.test_accuracy[-1])

    id_value = spec.intrinsic_dimension
    if not history.diverged and best_epoch is not None and id_value is not None and param_count >= id_value:
        ef = efficiency(EfficiencyInputs(
            best_accuracy=best_accuracy,
            epochs_to_best=best_epoch,
            param_count=param_count,
            intrinsic_dimension=id_value,
        ))

    return RunRecord(
        **fields,
        status="diverged" if history.diverged else "completed",
        train_accuracy=history.train_accuracy,
        test_accuracy=history.test_accuracy,
        train_loss=[None if v is None or not math.isfinite(v) else v for v in history.train_loss],
        hsic_loss=[None if v is None or not math.isfinite(v) else v for v in history.hsic_loss],
        best_accuracy=best_accuracy,
        best_epoch=best_epoch,
        param_count=param_count,
        efficiency=ef,
        gap_at_best=gap_at_best,
        final_gap=final_gap,
        wall_seconds=wall_seconds,
    )


def execute_run(spec: RunSpec, checkpoint_store: Optional[ResultStore] = None) -> RunRecord:
    """Build, initialize and train one model; any error becomes a failed record.

    With a ``checkpoint_store`` the trained model of a non-diverged run is saved
    there under its run id.
    """
    start = time.perf_counter()
    dataset_name = spec.dataset.display_name
    model_cfg = spec.model
    try:
        train, test = get_dataset(spec.dataset)
        model_cfg = spec.model.with_dims(train.dim, train.num_classes)
        if spec.intrinsic_dimension is None:
            spec = spec.model_copy(update={"intrinsic_dimension": estimate_intrinsic_dimension(test)})

        logger.info("Run %s: %s, %s", spec.run_id, model_cfg.label, spec.scheme.label)
        model = build_model(model_cfg, spec.scheme.initialization, np.random.default_rng(spec.seed))
        if spec.scheme.trainer == TrainerKind.HSIC:
            history = train_hsic(model, train, test, spec.scheme, spec.hsic, spec.seed)
        else:
            history = train_backprop(model, train, test, spec.scheme, spec.seed)

        if checkpoint_store is not None and not history.diverged:
            save_checkpoint(model, checkpoint_store.checkpoint_path(spec.run_id))

        record = record_from_history(spec, dataset_name, model_cfg, history, model.param_count(),
                                     time.perf_counter() - start)
        if record.status == "diverged":
            logger.warning("Run %s diverged after %d epochs", spec.run_id, history.epochs)
        else:
            logger.info("Run %s finished: A*=%.4f at epoch %d", spec.run_id,
                        record.best_accuracy, record.best_epoch)
        return record
    except Exception as e:
        logger.error("Run %s failed: %s: %s", spec.run_id, type(e).__name__, e)
        return RunRecord(
            **_base_record(spec, dataset_name, model_cfg),
            status="failed",
            error=f"{type(e).__name__}: {e}",
            wall_seconds=time.perf_counter() - start,
        )


def _with_intrinsic_dimension(specs: List[RunSpec]) -> List[RunSpec]:
    """Estimate ID once per dataset for specs that do not carry one."""
    estimates: Dict[str, Optional[float]] = {}
    resolved = []
    for spec in specs:
        if spec.intrinsic_dimension is None:
            key = spec.dataset.model_dump_json()
            if key not in estimates:
                try:
                    estimates[key] = estimate_intrinsic_dimension(get_dataset(spec.dataset)[1])
                except KanBenchError as e:
                    # the run itself will report the loading error
                    logger.debug("Deferring dataset error for %s: %s", spec.run_id, e)
                    estimates[key] = None
            spec = spec.model_copy(update={"intrinsic_dimension": estimates[key]})
        resolved.append(spec)
    return resolved


def run_specs(
    specs: Sequence[RunSpec],
    workers: int = 1,
    store: Optional[ResultStore] = None,
    show_progress: bool = True,
    save_checkpoints: bool = False,
) -> List[RunRecord]:
    """Execute specs (in parallel when workers > 1); records come back in spec order."""
    specs = _with_intrinsic_dimension(list(specs))
    checkpoint_store = store if save_checkpoints else None
    records: List[RunRecord] = []
    if store is not None:
        store.reset()

    def collect(record: RunRecord) -> None:
        records.append(record)
        if store is not None:
            store.append(record)

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeRemainingColumn(),
        disable=not show_progress,
    ) as progress:
        task = progress.add_task("Training", total=len(specs))
        if workers > 1 and len(specs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for record in pool.map(execute_run, specs, [checkpoint_store] * len(specs)):
                    collect(record)
                    progress.advance(task)
        else:
            for spec in specs:
                collect(execute_run(spec, checkpoint_store))
                progress.advance(task)

    if store is not None:
        store.write_summary(records)
        logger.info("Wrote %d records to %s", len(records), store.output_dir)
    return records


def run_experiment(
    cfg: ExperimentConfig,
    store: Optional[ResultStore] = None,
    workers: Optional[int] = None,
    show_progress: bool = True,
) -> List[RunRecord]:
    specs = expand_grid(cfg)
    logger.info("Experiment %s: %d runs", cfg.name, len(specs))
    return run_specs(specs, workers or cfg.workers, store, show_progress)


# Sweeps --------------------------------------------------------------------

def config_param_count(cfg: ModelConfig) -> int:
    """Parameter count of the network ``cfg`` describes, without building it."""
    if cfg.in_dim is None or cfg.out_dim is None:
        raise ConfigError("parameter count needs in_dim and out_dim")
    dims = [cfg.in_dim] + cfg.resolved_widths()
    edge = cfg.grid_size + cfg.degree + 2
    hidden = list(zip(dims[:-1], dims[1:]))
    if cfg.family == Family.KAN:
        total = sum(a * b * edge for a, b in hidden)
        if cfg.output_layer == "kan":
            return total + dims[-1] * cfg.out_dim * edge
        return total + cfg.out_dim * (dims[-1] + 1)
    return sum(b * (a + 1) for a, b in hidden) + cfg.out_dim * (dims[-1] + 1)


def _check_sweep_base(base: ModelConfig) -> int:
    if base.family != Family.KAN:
        raise ConfigError(f"degree/width sweeps need a KAN base model, got {base.family.value}")
    widths = base.resolved_widths()
    if len(widths) != 1:
        raise ConfigError(f"degree/width sweeps need a single hidden layer, got widths {widths}")
    return widths[0]


def matched_width(base: ModelConfig, degree: int) -> int:
    """Width at the base degree whose parameter count is closest to ``degree`` at the base width."""
    _check_sweep_base(base)
    target = config_param_count(base.model_copy(update={"degree": degree}))
    one = config_param_count(base.model_copy(update={"widths": [1]}))
    slope = config_param_count(base.model_copy(update={"widths": [2]})) - one
    return max(1, int(round((target - (one - slope)) / slope)))


def _with_dataset_dims(base: ModelConfig, dataset: DatasetSpec) -> ModelConfig:
    if base.in_dim is not None and base.out_dim is not None:
        return base
    train, _ = get_dataset(dataset)
    return base.with_dims(train.dim, train.num_classes)


def sweep_specs(
    base: ModelConfig,
    degrees: Sequence[int],
    widths: Sequence[int],
    scheme: TrainingScheme,
    dataset: DatasetSpec,
    seed: int = 0,
    depths: Optional[Sequence[int]] = None,
    intrinsic_dimension: Optional[float] = None,
) -> List[RunSpec]:
    """One spec per degree, per width and per depth, everything else fixed.

    Every degree other than the base degree also gets a ``matched`` run: the
    base degree at the width whose parameter count is closest, tagged with
    the degree run's id as ``partner``.
    """
    base_width = _check_sweep_base(base)
    bad_degrees = [d for d in degrees if d < 1]
    if bad_degrees:
        raise ConfigError(f"sweep degrees must be >= 1, got {bad_degrees}")
    bad_widths = [w for w in widths if w < 1]
    if bad_widths:
        raise ConfigError(f"sweep widths must be >= 1, got {bad_widths}")
    bad_depths = [d for d in (depths or []) if d < 1]
    if bad_depths:
        raise ConfigError(f"sweep depths must be >= 1, got {bad_depths}")

    base = _with_dataset_dims(base, dataset)
    specs: List[RunSpec] = []

    def add(model: ModelConfig, tags: Dict[str, Any]) -> RunSpec:
        index = len(specs)
        spec = RunSpec(index=index, run_id=_run_id(index, model, scheme, seed, tags), dataset=dataset, model=model,
                       scheme=scheme, seed=seed, intrinsic_dimension=intrinsic_dimension, tags=tags)
        specs.append(spec)
        return spec

    degree_specs = [
        add(base.model_copy(update={"degree": degree}), {"sweep_axis": "degree", "degree": degree})
        for degree in degrees
    ]
    for width in widths:
        add(base.model_copy(update={"widths": [width]}), {"sweep_axis": "width", "width": width})
    for spec in degree_specs:
        if spec.model.degree == base.degree:
            continue
        width = matched_width(base, spec.model.degree)
        add(base.model_copy(update={"widths": [width]}),
            {"sweep_axis": "matched", "width": width, "partner": spec.run_id})
    for depth in depths or []:
        add(base.model_copy(update={"widths": [base_width] * depth}), {"sweep_axis": "depth", "depth": depth})
    return specs


def degree_width_sweep(
    base: ModelConfig,
    degrees: Sequence[int],
    widths: Sequence[int],
    scheme: TrainingScheme,
    dataset: DatasetSpec,
    seed: int = 0,
    depths: Optional[Sequence[int]] = None,
    workers: int = 1,
    store: Optional[ResultStore] = None,
    show_progress: bool = True,
) -> List[RunRecord]:
    specs = sweep_specs(base, degrees, widths, scheme, dataset, seed, depths)
    return run_specs(specs, workers, store, show_progress)


@dataclass(frozen=True)
class MatchedPair:
    degree_run: RunRecord
    width_run: RunRecord

    @property
    def relative_difference(self) -> float:
        return abs(self.degree_run.param_count - self.width_run.param_count) / max(1, self.degree_run.param_count)


def matched_parameter_pairs(records: Sequence[RunRecord], tolerance: float = 0.05) -> List[MatchedPair]:
    """Pair each degree-swept run with the matched-width run generated for it."""
    partners = {
        r.tags["partner"]: r for r in records
        if r.tags.get("sweep_axis") == "matched" and "partner" in r.tags
    }
    pairs = []
    for degree_run in records:
        if degree_run.tags.get("sweep_axis") != "degree" or degree_run.run_id not in partners:
            continue
        pair = MatchedPair(degree_run, partners[degree_run.run_id])
        if pair.relative_difference <= tolerance:
            pairs.append(pair)
        else:
            logger.info("No width within %.0f%% of the parameters of %s (closest differs by %.1f%%)",
                        100 * tolerance, degree_run.run_id, 100 * pair.relative_difference)
    return pairs


def _selection_key(rule: SelectionRule):
    if rule == SelectionRule.MIN_GAP:
        return lambda r: (-(r.gap_at_best if r.gap_at_best is not None else math.inf), r.best_accuracy or 0.0)
    if rule == SelectionRule.MAX_EFFICIENCY:
        return lambda r: (r.efficiency if r.efficiency is not None else -math.inf, r.best_accuracy or 0.0)
    return lambda r: (r.best_accuracy if r.best_accuracy is not None else -math.inf,)


def select_best_record(
    records: Sequence[RunRecord],
    rule: SelectionRule = SelectionRule.MAX_ACCURACY,
    family: Optional[Family] = None,
    dataset: Optional[str] = None,
) -> RunRecord:
    """Best completed record under ``rule``; ties go to the earliest record."""
    rule = SelectionRule(rule)
    candidates = [
        r for r in records
        if r.ok and r.best_accuracy is not None
        and (family is None or r.family == Family(family))
        and (dataset is None or r.dataset == dataset)
    ]
    if rule == SelectionRule.MAX_EFFICIENCY:
        candidates = [r for r in candidates if r.efficiency is not None]
    if not candidates:
        raise ConfigError(f"no completed runs to select a best scheme from (rule {rule.value})")
    key = _selection_key(rule)
    best = candidates[0]
    for record in candidates[1:]:
        if key(record) > key(best):
            best = record
    return best


def select_best_scheme(
    records: Sequence[RunRecord],
    rule: SelectionRule = SelectionRule.MAX_ACCURACY,
    family: Optional[Family] = None,
    dataset: Optional[str] = None,
) -> TrainingScheme:
    return select_best_record(records, rule, family, dataset).scheme


def activation_sweep(
    best_scheme: TrainingScheme,
    base: ModelConfig,
    dataset: DatasetSpec,
    activations: Optional[Sequence[Activation]] = None,
    seed: int = 0,
    workers: int = 1,
    store: Optional[ResultStore] = None,
    show_progress: bool = True,
) -> List[RunRecord]:
    """Re-run ``base`` under the best scheme once per activation, all seeds shared."""
    activations = [Activation(a) for a in (activations or DEFAULT_SWEEP_ACTIVATIONS)]
    specs = []
    for i, activation in enumerate(activations):
        model = base.model_copy(update={"activation": activation})
        tags = {"sweep_axis": "activation", "activation": activation.value}
        specs.append(RunSpec(index=i, run_id=_run_id(i, model, best_scheme, seed, tags), dataset=dataset,
                             model=model, scheme=best_scheme, seed=seed, tags=tags))
    return run_specs(specs, workers, store, show_progress)


@dataclass(frozen=True)
class SchemeSensitivity:
    """Spread of best test accuracy across training schemes for one model."""

    dataset: str
    model: str
    runs: int
    mean: float
    std: float
    minimum: float
    maximum: float

    @property
    def spread(self) -> float:
        return self.maximum - self.minimum


def scheme_sensitivity(records: Sequence[RunRecord]) -> List[SchemeSensitivity]:
    groups: Dict[Tuple[str, str], List[float]] = {}
    for record in records:
        if record.ok and record.best_accuracy is not None:
            groups.setdefault((record.dataset, record.model_label), []).append(record.best_accuracy)
    return [
        SchemeSensitivity(dataset, model, len(values), float(np.mean(values)), float(np.std(values)),
                          float(np.min(values)), float(np.max(values)))
        for (dataset, model), values in sorted(groups.items())
    ]


def failed_or_diverged(records: Sequence[RunRecord]) -> List[RunRecord]:
    return [r for r in records if not r.ok]
