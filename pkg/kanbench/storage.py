"""Result storage for kanbench: JSONL run records and a CSV summary."""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Union

from pydantic import ValidationError

from kanbench.errors import FormatError, StorageError
from kanbench.models import RunRecord

logger = logging.getLogger(__name__)

RUNS_FILE = "runs.jsonl"
SUMMARY_FILE = "summary.csv"
FIGURES_DIR = "figures"
CHECKPOINTS_DIR = "checkpoints"

SUMMARY_FIELDS = [
    "run_id", "dataset", "family", "size_class", "widths", "degree", "grid_size",
    "activation", "initialization", "optimizer", "lr", "trainer", "seed", "status",
    "best_accuracy", "best_epoch", "param_count", "intrinsic_dimension", "efficiency",
    "gap_at_best", "final_gap", "wall_seconds", "tags",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_row(record: RunRecord) -> dict:
    """One flat CSV row per run."""
    return {
        "run_id": record.run_id,
        "dataset": record.dataset,
        "family": record.family.value,
        "size_class": record.size_class.value,
        "widths": "x".join(str(w) for w in record.widths),
        "degree": _cell(record.degree),
        "grid_size": _cell(record.grid_size),
        "activation": record.activation.value,
        "initialization": record.scheme.initialization.value,
        "optimizer": record.scheme.optimizer.value,
        "lr": _cell(record.scheme.lr),
        "trainer": record.scheme.trainer.value,
        "seed": record.seed,
        "status": record.status,
        "best_accuracy": _cell(record.best_accuracy),
        "best_epoch": _cell(record.best_epoch),
        "param_count": record.param_count,
        "intrinsic_dimension": _cell(record.intrinsic_dimension),
        "efficiency": _cell(record.efficiency),
        "gap_at_best": _cell(record.gap_at_best),
        "final_gap": _cell(record.final_gap),
        "wall_seconds": f"{record.wall_seconds:.3f}",
        "tags": json.dumps(record.tags, sort_keys=True) if record.tags else "",
    }


class ResultStore:
    """Owns an output directory of run records, a summary table and figures."""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.runs_path = self.output_dir / RUNS_FILE
        self.summary_path = self.output_dir / SUMMARY_FILE
        self.figures_dir = self.output_dir / FIGURES_DIR
        self.checkpoints_dir = self.output_dir / CHECKPOINTS_DIR

    def _ensure_dir(self, path: Path) -> None:
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create output directory {path}: {e}") from e

    def reset(self) -> None:
        """Start a fresh runs file."""
        self._ensure_dir(self.output_dir)
        try:
            self.runs_path.write_text("", encoding="utf-8")
        except OSError as e:
            raise StorageError(f"cannot write {self.runs_path}: {e}") from e

    def append(self, record: RunRecord) -> None:
        """Append one record as a single JSON line."""
        self._ensure_dir(self.output_dir)
        try:
            with open(self.runs_path, "a", encoding="utf-8") as f:
                f.write(record.model_dump_json() + "\n")
        except OSError as e:
            raise StorageError(f"cannot write {self.runs_path}: {e}") from e

    def write_summary(self, records: Iterable[RunRecord]) -> Path:
        self._ensure_dir(self.output_dir)
        try:
            with open(self.summary_path, "w", encoding="utf-8", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS)
                writer.writeheader()
                for record in records:
                    writer.writerow(summary_row(record))
        except OSError as e:
            raise StorageError(f"cannot write {self.summary_path}: {e}") from e
        return self.summary_path

    def write_results(self, records: List[RunRecord]) -> List[Path]:
        """Rewrite runs.jsonl and summary.csv from ``records``."""
        self.reset()
        for record in records:
            self.append(record)
        written = [self.runs_path, self.write_summary(records)]
        logger.info("Wrote %d records to %s", len(records), self.output_dir)
        return written

    def load(self) -> List[RunRecord]:
        return load_records(self.runs_path)

    def checkpoint_path(self, run_id: str) -> Path:
        self._ensure_dir(self.checkpoints_dir)
        return self.checkpoints_dir / f"{run_id}.npz"


def load_records(path: Union[str, Path]) -> List[RunRecord]:
    """Read a JSONL file of run records; a directory means its runs.jsonl."""
    path = Path(path)
    if path.is_dir():
        path = path / RUNS_FILE
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e

    records = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.model_validate_json(line))
        except ValidationError as e:
            raise FormatError(f"{path}:{line_no}: invalid run record: {e}") from e
    return records


def write_results(records: List[RunRecord], output_dir: Union[str, Path]) -> List[Path]:
    return ResultStore(output_dir).write_results(records)
