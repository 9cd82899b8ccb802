"""SVG figures of run records rendered with matplotlib."""

import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from kanbench.errors import ContractError, StorageError  # noqa: E402
from kanbench.models import Family, RunRecord  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "kanbench"

FAMILY_COLORS = {Family.KAN: "#3498db", Family.MLP: "#e74c3c", Family.MLP_WIDE: "#2ecc71"}
SVG_METADATA = {"Date": None}


def _save(fig, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", bbox_inches="tight", facecolor="white", metadata=SVG_METADATA)
    except OSError as e:
        raise StorageError(f"cannot write figure {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug("Wrote %s", path)
    return path


def _completed(records: Sequence[RunRecord]) -> List[RunRecord]:
    return [r for r in records if r.ok and r.best_accuracy is not None]


def _by_key(records: Sequence[RunRecord], key) -> "OrderedDict[str, List[RunRecord]]":
    groups: "OrderedDict[str, List[RunRecord]]" = OrderedDict()
    for record in records:
        groups.setdefault(key(record), []).append(record)
    return groups


def accuracy_bars(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    """Grouped bars: best test accuracy over all schemes, per dataset and model."""
    records = _completed(records)
    datasets = list(_by_key(records, lambda r: r.dataset))
    models = list(_by_key(records, lambda r: r.model_label))
    best: Dict[tuple, float] = {}
    for r in records:
        key = (r.dataset, r.model_label)
        best[key] = max(best.get(key, 0.0), r.best_accuracy)

    fig, ax = plt.subplots(figsize=(max(6, 2 * len(datasets) + len(models)), 5))
    width = 0.8 / max(1, len(models))
    for i, model in enumerate(models):
        xs = [d + (i - (len(models) - 1) / 2) * width for d in range(len(datasets))]
        ax.bar(xs, [best.get((ds, model), 0.0) for ds in datasets], width, label=model, alpha=0.85)
    ax.set_xticks(range(len(datasets)))
    ax.set_xticklabels(datasets)
    ax.set_ylabel("Best test accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("Test accuracy of KANs and MLPs")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, Path(path))


def scheme_boxplots(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    """One panel per dataset; one box per model over all training schemes."""
    groups = _by_key(_completed(records), lambda r: r.dataset)
    fig, axes = plt.subplots(1, max(1, len(groups)), figsize=(6 * max(1, len(groups)), 5), squeeze=False)
    for ax, (dataset, runs) in zip(axes[0], groups.items()):
        per_model = _by_key(runs, lambda r: r.model_label)
        ax.boxplot([[r.best_accuracy for r in v] for v in per_model.values()])
        ax.set_xticks(range(1, len(per_model) + 1))
        ax.set_xticklabels(list(per_model), rotation=30, ha="right", fontsize=8)
        ax.set_title(dataset)
        ax.set_ylabel("Best test accuracy")
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Accuracy across training schemes")
    return _save(fig, Path(path))


def _scatter_vs_size(records: Sequence[RunRecord], path: Path, attr: str, ylabel: str, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 5))
    for family, runs in _by_key(_completed(records), lambda r: r.family).items():
        points = [(r.param_count, getattr(r, attr)) for r in runs if getattr(r, attr) is not None]
        if points:
            xs, ys = zip(*points)
            ax.scatter(xs, ys, label=family.value, color=FAMILY_COLORS.get(family), alpha=0.7)
    ax.set_xscale("log")
    ax.set_xlabel("Parameters")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    return _save(fig, path)


def efficiency_vs_size(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    return _scatter_vs_size(records, Path(path), "efficiency", "Efficiency (EF)", "Efficiency vs. model size")


def gap_vs_size(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    return _scatter_vs_size(records, Path(path), "gap_at_best", "Train - test accuracy at best epoch",
                            "Generalization gap vs. model size")


def sweep_plot(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    """Best accuracy against parameter count, one line per swept axis."""
    fig, ax = plt.subplots(figsize=(7, 5))
    swept = [r for r in _completed(records) if r.tags.get("sweep_axis") in ("degree", "width", "matched", "depth")]
    for axis, runs in _by_key(swept, lambda r: r.tags["sweep_axis"]).items():
        runs = sorted(runs, key=lambda r: r.param_count)
        ax.plot([r.param_count for r in runs], [r.best_accuracy for r in runs], marker="o", label=f"vary {axis}")
        for r in runs:
            ax.annotate(str(r.tags.get(axis, r.tags.get("width", ""))), (r.param_count, r.best_accuracy), fontsize=7,
                        textcoords="offset points", xytext=(3, 3))
    ax.set_xscale("log")
    ax.set_xlabel("Parameters")
    ax.set_ylabel("Best test accuracy")
    ax.set_title("Degree vs. width")
    ax.grid(alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    return _save(fig, Path(path))


def activation_plot(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    runs = [r for r in _completed(records) if r.tags.get("sweep_axis") == "activation"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r.activation.value for r in runs], [r.best_accuracy for r in runs], color="#3498db", alpha=0.85)
    ax.set_ylabel("Best test accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("KAN accuracy by activation")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, Path(path))


def emit_plots(records: Sequence[RunRecord], directory: Union[str, Path]) -> List[Path]:
    """Write every figure that applies to ``records`` into ``directory``."""
    if not records:
        raise ContractError("no records to plot")
    directory = Path(directory)
    written = [
        accuracy_bars(records, directory / "accuracy.svg"),
        scheme_boxplots(records, directory / "scheme_boxplots.svg"),
        efficiency_vs_size(records, directory / "efficiency_vs_size.svg"),
        gap_vs_size(records, directory / "gap_vs_size.svg"),
    ]
    axes = {r.tags.get("sweep_axis") for r in records}
    if axes & {"degree", "width", "depth"}:
        written.append(sweep_plot(records, directory / "degree_width_sweep.svg"))
    if "activation" in axes:
        written.append(activation_plot(records, directory / "activation_sweep.svg"))
    logger.info("Wrote %d figures to %s", len(written), directory)
    return written
