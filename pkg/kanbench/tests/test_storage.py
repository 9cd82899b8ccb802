import csv
import tempfile
import unittest
from pathlib import Path

from kanbench.errors import ContractError, FormatError, StorageError
from kanbench.models import Activation, Family, RunRecord, SizeClass, TrainingScheme
from kanbench.plots import emit_plots
from kanbench.storage import RUNS_FILE, SUMMARY_FIELDS, ResultStore, load_records, write_results


def sample_records(count: int = 27):
    records = []
    for i in range(count):
        family = Family.KAN if i % 2 == 0 else Family.MLP
        test_accuracy = [0.5, 0.7 + 0.01 * (i % 5), 0.65]
        records.append(RunRecord(
            run_id=f"{i:04d}-{family.value}",
            dataset="blobs" if i < count - 3 else "spirals",
            family=family,
            size_class=SizeClass.SMALL,
            widths=[8],
            degree=3 if family == Family.KAN else None,
            grid_size=5 if family == Family.KAN else None,
            activation=Activation.GELU,
            scheme=TrainingScheme(lr=[0.05, 0.005, 0.0005][i % 3]),
            seed=0,
            status="diverged" if i == 4 else "completed",
            train_accuracy=[0.55, 0.8, 0.9],
            test_accuracy=test_accuracy,
            train_loss=[0.9, 0.5, None],
            best_accuracy=max(test_accuracy),
            best_epoch=1,
            param_count=100 * (i + 1),
            intrinsic_dimension=3.25,
            efficiency=0.1 + 0.01 * i,
            gap_at_best=0.8 - test_accuracy[1],
            final_gap=0.25,
            wall_seconds=1.5,
            tags={"sweep_axis": "degree", "degree": 2 + i % 3} if i % 9 == 0 else {},
        ))
    return records


class ResultStoreTests(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name) / "out"
        self.records = sample_records()

    def test_one_line_and_row_per_record(self) -> None:
        runs, summary = write_results(self.records, self.dir)
        self.assertEqual(len(runs.read_text(encoding="utf-8").splitlines()), 27)
        with open(summary, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        self.assertEqual(len(rows), 27)
        self.assertEqual(list(rows[0]), SUMMARY_FIELDS)
        self.assertEqual(rows[0]["widths"], "8")
        self.assertEqual(rows[1]["degree"], "")

    def test_reload_reproduces_records(self) -> None:
        write_results(self.records, self.dir)
        self.assertEqual(load_records(self.dir), self.records)
        self.assertEqual(load_records(self.dir / RUNS_FILE), self.records)

    def test_append_then_load(self) -> None:
        store = ResultStore(self.dir)
        store.reset()
        for record in self.records[:3]:
            store.append(record)
        self.assertEqual(store.load(), self.records[:3])

    def test_rewrite_replaces_previous_runs(self) -> None:
        store = ResultStore(self.dir)
        store.write_results(self.records)
        store.write_results(self.records[:2])
        self.assertEqual(len(store.load()), 2)

    def test_checkpoint_path(self) -> None:
        path = ResultStore(self.dir).checkpoint_path("0001-KAN")
        self.assertEqual(path.name, "0001-KAN.npz")
        self.assertTrue(path.parent.is_dir())

    def test_malformed_line(self) -> None:
        write_results(self.records[:2], self.dir)
        with open(self.dir / RUNS_FILE, "a", encoding="utf-8") as fh:
            fh.write('{"run_id": "incomplete"}\n')
        with self.assertRaises(FormatError):
            load_records(self.dir)

    def test_unwritable_directory(self) -> None:
        blocker = Path(self.tmp.name) / "file"
        blocker.write_text("x", encoding="utf-8")
        with self.assertRaises(StorageError):
            write_results(self.records, blocker / "out")

    def test_missing_results(self) -> None:
        with self.assertRaises(StorageError):
            load_records(Path(self.tmp.name) / "missing")


class PlotTests(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_figures_written(self) -> None:
        records = sample_records()
        written = emit_plots(records, self.dir / "figures")
        names = {path.name for path in written}
        self.assertEqual(names, {"accuracy.svg", "scheme_boxplots.svg", "efficiency_vs_size.svg",
                                 "gap_vs_size.svg", "degree_width_sweep.svg"})
        for path in written:
            self.assertTrue(path.read_text(encoding="utf-8").lstrip().startswith("<?xml"))

    def test_activation_figure(self) -> None:
        records = [r.model_copy(update={"tags": {"sweep_axis": "activation"}}) for r in sample_records(3)]
        names = {path.name for path in emit_plots(records, self.dir)}
        self.assertIn("activation_sweep.svg", names)
        self.assertNotIn("degree_width_sweep.svg", names)

    def test_plots_are_reproducible(self) -> None:
        records = sample_records()
        first = emit_plots(records, self.dir / "a")
        second = emit_plots(records, self.dir / "b")
        for a, b in zip(first, second):
            self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_no_records(self) -> None:
        with self.assertRaises(ContractError):
            emit_plots([], self.dir)


if __name__ == "__main__":
    unittest.main()
