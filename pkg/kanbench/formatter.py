"""Output formatting for kanbench."""

from typing import Any, Dict, List, Optional, Sequence

import yaml
from rich.console import Console
from rich.syntax import Syntax
from rich.table import Table

from kanbench.models import ExperimentConfig, RunRecord


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{100 * value:.2f}%"


def _num(value: Optional[float], fmt: str = ".4f") -> str:
    return "-" if value is None else format(value, fmt)


STATUS_STYLE = {"completed": "green", "diverged": "yellow", "failed": "red"}


class Formatter:
    """Rich tables and one-line messages for the CLI."""

    def __init__(self, verbose: bool = False, console: Optional[Console] = None):
        self.console = console or Console()
        self.verbose = verbose

    def format_records(self, records: Sequence[RunRecord], title: str = "Runs"):
        if not records:
            self.console.print("[yellow]No runs found.[/yellow]")
            return

        table = Table(title=title)
        table.add_column("Run", style="cyan", no_wrap=True)
        table.add_column("Dataset", style="blue")
        table.add_column("Model", style="green")
        table.add_column("Scheme")
        table.add_column("Status")
        table.add_column("A*", justify="right")
        table.add_column("E*", justify="right")
        table.add_column("P", justify="right")
        table.add_column("EF", justify="right")
        table.add_column("Gap", justify="right")
        if self.verbose:
            table.add_column("Seconds", justify="right", style="dim")

        for r in records:
            status = f"[{STATUS_STYLE[r.status]}]{r.status}[/{STATUS_STYLE[r.status]}]"
            row = [
                r.run_id, r.dataset, r.model_label, r.scheme.label, status,
                _pct(r.best_accuracy), "-" if r.best_epoch is None else str(r.best_epoch),
                str(r.param_count), _num(r.efficiency), _pct(r.gap_at_best),
            ]
            if self.verbose:
                row.append(f"{r.wall_seconds:.1f}")
            table.add_row(*row)
        self.console.print(table)

    def format_best_schemes(self, best: Dict[tuple, RunRecord]):
        table = Table(title="Best training scheme per model")
        table.add_column("Dataset", style="blue")
        table.add_column("Model", style="green")
        table.add_column("Scheme", style="cyan")
        table.add_column("A*", justify="right")
        table.add_column("E*", justify="right")
        table.add_column("Gap at best", justify="right")
        table.add_column("Final gap", justify="right")
        for (dataset, model), r in best.items():
            table.add_row(dataset, model, r.scheme.label, _pct(r.best_accuracy), str(r.best_epoch),
                          _pct(r.gap_at_best), _pct(r.final_gap))
        self.console.print(table)

    def format_sensitivity(self, rows: Sequence[Any]):
        table = Table(title="Sensitivity to the training scheme")
        table.add_column("Dataset", style="blue")
        table.add_column("Model", style="green")
        table.add_column("Runs", justify="right")
        table.add_column("Mean A*", justify="right")
        table.add_column("Std", justify="right")
        table.add_column("Min", justify="right")
        table.add_column("Max", justify="right")
        for s in rows:
            table.add_row(s.dataset, s.model, str(s.runs), _pct(s.mean), _pct(s.std),
                          _pct(s.minimum), _pct(s.maximum))
        self.console.print(table)

    def format_pairs(self, pairs: Sequence[Any]):
        if not pairs:
            self.console.print("[yellow]No matched-parameter pairs.[/yellow]")
            return
        table = Table(title="Matched-parameter pairs (degree vs. width)")
        table.add_column("Degree run", style="cyan")
        table.add_column("P", justify="right")
        table.add_column("A*", justify="right")
        table.add_column("Width run", style="cyan")
        table.add_column("P", justify="right")
        table.add_column("A*", justify="right")
        table.add_column("Winner", style="green")
        for pair in pairs:
            d, w = pair.degree_run, pair.width_run
            if d.best_accuracy is None or w.best_accuracy is None:
                winner = "-"
            elif d.best_accuracy == w.best_accuracy:
                winner = "tie"
            else:
                winner = "degree" if d.best_accuracy > w.best_accuracy else "width"
            table.add_row(f"k={d.degree} n={d.widths[0]}", str(d.param_count), _pct(d.best_accuracy),
                          f"k={w.degree} n={w.widths[0]}", str(w.param_count), _pct(w.best_accuracy), winner)
        self.console.print(table)

    def format_activation_ranking(self, records: Sequence[RunRecord]):
        ranked = sorted(
            (r for r in records if r.tags.get("sweep_axis") == "activation"),
            key=lambda r: -(r.best_accuracy if r.best_accuracy is not None else -1.0),
        )
        table = Table(title="Activation sweep")
        table.add_column("Rank", justify="right")
        table.add_column("Activation", style="green")
        table.add_column("Status")
        table.add_column("A*", justify="right")
        table.add_column("E*", justify="right")
        for i, r in enumerate(ranked, 1):
            table.add_row(str(i), r.activation.value, r.status, _pct(r.best_accuracy),
                          "-" if r.best_epoch is None else str(r.best_epoch))
        self.console.print(table)

    def format_experiment_list(self, experiments: Dict[str, Dict[str, Any]]):
        if not experiments:
            self.console.print("[yellow]No experiments found.[/yellow]")
            return
        table = Table(title="Experiments")
        table.add_column("Name", style="cyan", no_wrap=True)
        table.add_column("Source", style="blue")
        table.add_column("Trainer")
        table.add_column("Runs", justify="right")
        table.add_column("Description", style="dim")
        for name, info in sorted(experiments.items()):
            cfg: ExperimentConfig = info["experiment"]
            runs = (len(cfg.models) * len(cfg.grid.initializations) * len(cfg.grid.optimizers)
                    * len(cfg.grid.learning_rates) * len(cfg.seeds))
            table.add_row(name, info["source"], cfg.trainer.value, str(runs), cfg.description)
        self.console.print(table)

    def format_experiment(self, cfg: ExperimentConfig):
        text = yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
        self.console.print(Syntax(text, "yaml", theme="monokai", word_wrap=True))

    def format_paths(self, paths: List[Any]):
        for path in paths:
            self.console.print(f"  [dim]{path}[/dim]")

    def format_error(self, error: str):
        """Format error message."""
        self.console.print(f"[red]Error:[/red] {error}")

    def format_success(self, message: str):
        """Format success message."""
        self.console.print(f"[green]✓[/green] {message}")

    def format_warning(self, message: str):
        self.console.print(f"[yellow]![/yellow] {message}")

    def format_info(self, message: str):
        """Format info message."""
        self.console.print(f"[blue]ℹ[/blue] {message}")
