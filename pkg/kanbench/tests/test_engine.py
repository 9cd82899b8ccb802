import tempfile
import unittest
from pathlib import Path

import numpy as np

from kanbench.errors import ConfigError
from kanbench.experiments.engine import (
    ExperimentEngine,
    MatchedPair,
    activation_sweep,
    config_param_count,
    degree_width_sweep,
    execute_run,
    expand_grid,
    failed_or_diverged,
    matched_parameter_pairs,
    matched_width,
    run_experiment,
    run_specs,
    scheme_sensitivity,
    select_best_record,
    select_best_scheme,
    sweep_specs,
)
from kanbench.models import (
    Activation,
    DatasetSpec,
    ExperimentConfig,
    Family,
    GridAxes,
    Initialization,
    ModelConfig,
    OptimizerKind,
    RunRecord,
    SelectionRule,
    SizeClass,
    SyntheticSpec,
    TrainingScheme,
)
from kanbench.nn import build_model, load_checkpoint
from kanbench.storage import ResultStore, load_records


def blobs_spec(n: int = 160, d: int = 4, seed: int = 0) -> DatasetSpec:
    return DatasetSpec(kind="synthetic", name="blobs", synthetic=SyntheticSpec(n=n, d=d, classes=2, seed=seed))


def tiny_experiment(**overrides) -> ExperimentConfig:
    data = dict(
        name="tiny",
        dataset=blobs_spec(),
        models=[
            ModelConfig(family=Family.KAN, widths=[4], grid_size=3, degree=2),
            ModelConfig(family=Family.MLP, widths=[8]),
        ],
        grid=GridAxes(batch_size=32, max_epochs=2),
        intrinsic_dimension=3.0,
    )
    data.update(overrides)
    return ExperimentConfig(**data)


def make_record(run_id: str, accuracy=None, gap=None, ef=None, status="completed", **fields) -> RunRecord:
    data = dict(
        run_id=run_id,
        dataset=fields.pop("dataset", "blobs"),
        family=fields.pop("family", Family.KAN),
        size_class=SizeClass.SMALL,
        widths=fields.pop("widths", [8]),
        activation=Activation.GELU,
        scheme=fields.pop("scheme", TrainingScheme()),
        seed=0,
        status=status,
        best_accuracy=accuracy,
        best_epoch=None if accuracy is None else 0,
        gap_at_best=gap,
        efficiency=ef,
    )
    data.update(fields)
    return RunRecord(**data)


def without_timing(record: RunRecord) -> dict:
    return record.model_dump(exclude={"wall_seconds"})


class ExpandGridTests(unittest.TestCase):
    def test_default_axes_give_27_schemes(self) -> None:
        cfg = tiny_experiment(models=[ModelConfig(family=Family.MLP)])
        specs = expand_grid(cfg)
        self.assertEqual(len(specs), 27)
        triples = {(s.scheme.initialization, s.scheme.optimizer, s.scheme.lr) for s in specs}
        self.assertEqual(len(triples), 27)

    def test_two_models(self) -> None:
        self.assertEqual(len(expand_grid(tiny_experiment())), 54)

    def test_single_value_axes(self) -> None:
        grid = GridAxes(initializations=[Initialization.ORTHOGONAL], optimizers=[OptimizerKind.SGD],
                        learning_rates=[0.01])
        specs = expand_grid(tiny_experiment(models=[ModelConfig(family=Family.MLP)], grid=grid))
        self.assertEqual(len(specs), 1)
        self.assertEqual(specs[0].scheme.label, "orthogonal/sgd/lr=0.01")

    def test_lexicographic_order(self) -> None:
        specs = expand_grid(tiny_experiment())
        first, second, last = specs[0], specs[1], specs[-1]
        self.assertEqual(first.model.family, Family.KAN)
        self.assertEqual((first.scheme.initialization, first.scheme.optimizer, first.scheme.lr),
                         (Initialization.KAIMING_NORMAL, OptimizerKind.SGD, 0.05))
        self.assertEqual(second.scheme.lr, 0.005)
        self.assertEqual(last.model.family, Family.MLP)
        self.assertEqual([s.index for s in specs], list(range(54)))

    def test_same_config_same_specs(self) -> None:
        self.assertEqual(expand_grid(tiny_experiment()), expand_grid(tiny_experiment()))

    def test_empty_axis(self) -> None:
        with self.assertRaises(ConfigError) as ctx:
            expand_grid(tiny_experiment(grid=GridAxes(optimizers=[])))
        self.assertIn("grid.optimizers", str(ctx.exception))


class ExecuteRunTests(unittest.TestCase):
    def _spec(self, **scheme):
        grid = GridAxes(initializations=[Initialization.KAIMING_NORMAL], optimizers=[OptimizerKind.ADAM],
                        learning_rates=[scheme.pop("lr", 0.005)], batch_size=32, max_epochs=scheme.pop("epochs", 3))
        models = scheme.pop("models", [ModelConfig(family=Family.MLP, widths=[8])])
        return expand_grid(tiny_experiment(models=models, grid=grid))

    def test_record_consistency(self) -> None:
        record = execute_run(self._spec()[0])
        self.assertEqual(record.status, "completed")
        self.assertEqual(len(record.test_accuracy), 3)
        self.assertEqual(record.best_accuracy, max(record.test_accuracy))
        self.assertEqual(record.best_epoch, record.test_accuracy.index(max(record.test_accuracy)))
        self.assertIsNotNone(record.efficiency)
        self.assertEqual(record.intrinsic_dimension, 3.0)

    def test_deterministic(self) -> None:
        spec = self._spec()[0]
        self.assertEqual(without_timing(execute_run(spec)), without_timing(execute_run(spec)))

    def test_zero_learning_rate_keeps_accuracy(self) -> None:
        record = execute_run(self._spec(lr=0.0)[0])
        self.assertEqual(len(set(record.test_accuracy)), 1)
        self.assertEqual(len(set(record.train_accuracy)), 1)

    def test_separable_blobs_with_small_mlp(self) -> None:
        grid = GridAxes(initializations=[Initialization.KAIMING_NORMAL], optimizers=[OptimizerKind.ADAM],
                        learning_rates=[5e-4], batch_size=32, max_epochs=10)
        cfg = tiny_experiment(dataset=blobs_spec(n=600, d=8), grid=grid,
                              models=[ModelConfig(family=Family.MLP, size_class=SizeClass.SMALL)])
        record = execute_run(expand_grid(cfg)[0])
        self.assertGreaterEqual(record.best_accuracy, 0.99)

    def test_kan_has_more_parameters_than_mlp(self) -> None:
        kan, mlp = [execute_run(s) for s in self._spec(
            epochs=1, models=[ModelConfig(family=Family.KAN, widths=[8]), ModelConfig(family=Family.MLP, widths=[8])]
        )]
        self.assertGreater(kan.param_count, mlp.param_count)

    def test_error_becomes_failed_record(self) -> None:
        spec = self._spec()[0]
        broken = spec.model_copy(update={"dataset": DatasetSpec(kind="idx", train_images="/nonexistent/images")})
        record = execute_run(broken)
        self.assertEqual(record.status, "failed")
        self.assertIn("Error", record.error)
        self.assertIsNone(record.efficiency)

    def test_crash_isolation(self) -> None:
        specs = self._spec(lr=0.005)
        broken = specs[0].model_copy(update={
            "run_id": "broken",
            "model": ModelConfig(family=Family.MLP, widths=[]),
        })
        records = run_specs([broken, specs[0]], show_progress=False)
        self.assertEqual([r.status for r in records], ["failed", "completed"])
        self.assertEqual([r.run_id for r in failed_or_diverged(records)], ["broken"])

    def test_diverged_run_has_no_efficiency(self) -> None:
        record = execute_run(self._spec(lr=1e308)[0])
        self.assertEqual(record.status, "diverged")
        self.assertIsNone(record.efficiency)

    def test_hsic_trainer(self) -> None:
        cfg = tiny_experiment(
            trainer="hsic",
            models=[ModelConfig(family=Family.MLP, widths=[8])],
            grid=GridAxes(initializations=[Initialization.KAIMING_NORMAL], optimizers=[OptimizerKind.ADAM],
                          learning_rates=[0.005], batch_size=32, max_epochs=2),
            hsic={"layer_epochs": 2},
        )
        record = execute_run(expand_grid(cfg)[0])
        self.assertEqual(record.status, "completed")
        self.assertEqual(len(record.hsic_loss), 2)
        self.assertEqual(len(record.test_accuracy), 2)

    def test_checkpoint_written_through_store(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            store = ResultStore(Path(tmp))
            spec = self._spec(epochs=1)[0]
            records = run_specs([spec], store=store, show_progress=False, save_checkpoints=True)
            path = store.checkpoint_path(spec.run_id)
            self.assertTrue(path.exists())
            self.assertEqual(load_checkpoint(path).param_count(), records[0].param_count)


class GridReproductionTests(unittest.TestCase):
    def test_full_grid_is_reproducible(self) -> None:
        cfg = tiny_experiment(grid=GridAxes(batch_size=64, max_epochs=1))
        with tempfile.TemporaryDirectory() as tmp:
            first = run_experiment(cfg, ResultStore(Path(tmp) / "a"), workers=1, show_progress=False)
            second = run_experiment(cfg, ResultStore(Path(tmp) / "b"), workers=1, show_progress=False)
            self.assertEqual(len(first), 54)
            self.assertEqual([without_timing(r) for r in first], [without_timing(r) for r in second])
            reloaded = load_records(Path(tmp) / "a")
        self.assertEqual(reloaded, first)

    def test_parallel_matches_serial(self) -> None:
        specs = expand_grid(tiny_experiment(
            models=[ModelConfig(family=Family.MLP, widths=[4])],
            grid=GridAxes(optimizers=[OptimizerKind.ADAM], batch_size=64, max_epochs=1),
        ))
        serial = run_specs(specs, workers=1, show_progress=False)
        parallel = run_specs(specs, workers=2, show_progress=False)
        self.assertEqual([without_timing(r) for r in serial], [without_timing(r) for r in parallel])


class SweepTests(unittest.TestCase):
    def setUp(self) -> None:
        self.base = ModelConfig(family=Family.KAN, widths=[4], grid_size=3, degree=3, dropout=0.0)
        self.scheme = TrainingScheme(lr=1e-3, batch_size=32, max_epochs=1)

    def test_axes_and_matched_runs(self) -> None:
        specs = sweep_specs(self.base, [2, 3, 4, 5, 6], [8, 16, 32, 64], self.scheme, blobs_spec())
        self.assertEqual(len(specs), 13)
        self.assertEqual([s.tags["sweep_axis"] for s in specs], ["degree"] * 5 + ["width"] * 4 + ["matched"] * 4)
        self.assertEqual({s.seed for s in specs}, {0})
        self.assertEqual(len({s.run_id for s in specs}), 13)
        self.assertTrue(all(s.model.in_dim == 4 and s.model.out_dim == 2 for s in specs))

    def test_default_sweep_pairs_every_degree(self) -> None:
        base = ModelConfig(family=Family.KAN, widths=[16], grid_size=5, degree=3)
        specs = sweep_specs(base, [2, 3, 4, 5, 6], [8, 16, 32, 64], self.scheme, blobs_spec(d=2))
        by_id = {s.run_id: s for s in specs}
        partners = {s.tags["partner"]: s for s in specs if s.tags["sweep_axis"] == "matched"}
        for spec in specs:
            if spec.tags["sweep_axis"] != "degree" or spec.model.degree == base.degree:
                continue
            with self.subTest(degree=spec.model.degree):
                partner = partners[spec.run_id]
                self.assertIn(partner.tags["partner"], by_id)
                self.assertNotEqual(partner.model.degree, spec.model.degree)
                p_degree, p_width = config_param_count(spec.model), config_param_count(partner.model)
                self.assertLessEqual(abs(p_degree - p_width) / p_degree, 0.05)

    def test_depth_axis(self) -> None:
        specs = sweep_specs(self.base, [2], [8], self.scheme, blobs_spec(), depths=[1, 3])
        depth_specs = [s for s in specs if s.tags["sweep_axis"] == "depth"]
        self.assertEqual([s.model.resolved_widths() for s in depth_specs], [[4], [4, 4, 4]])

    def test_invalid_axes(self) -> None:
        with self.assertRaises(ConfigError):
            sweep_specs(self.base, [0, 2], [8], self.scheme, blobs_spec())
        with self.assertRaises(ConfigError):
            sweep_specs(self.base.model_copy(update={"widths": [4, 4]}), [2], [8], self.scheme, blobs_spec())
        with self.assertRaises(ConfigError):
            sweep_specs(ModelConfig(family=Family.MLP, widths=[4]), [2], [8], self.scheme, blobs_spec())

    def test_shared_initialization_across_degrees(self) -> None:
        specs = sweep_specs(self.base.model_copy(update={"in_dim": 4, "out_dim": 2}), [2, 5], [], self.scheme,
                            blobs_spec())
        first, second = (build_model(s.model, s.scheme.initialization, np.random.default_rng(s.seed))
                         for s in specs[:2])
        self.assertTrue(np.array_equal(first.layers[0].w_b.values, second.layers[0].w_b.values))

    def test_matched_width(self) -> None:
        base = self.base.model_copy(update={"in_dim": 4, "out_dim": 2})
        for degree in (4, 6, 9):
            width = matched_width(base, degree)
            target = config_param_count(base.model_copy(update={"degree": degree}))
            for other in (width - 1, width + 1):
                if other >= 1:
                    closer = abs(config_param_count(base.model_copy(update={"widths": [other]})) - target)
                    self.assertGreaterEqual(closer, abs(
                        config_param_count(base.model_copy(update={"widths": [width]})) - target))

    def test_config_count_matches_built_model(self) -> None:
        for cfg in (
            ModelConfig(family=Family.KAN, widths=[5, 3], in_dim=4, out_dim=2),
            ModelConfig(family=Family.KAN, widths=[5], in_dim=4, out_dim=2, output_layer="linear"),
            ModelConfig(family=Family.MLP_WIDE, size_class=SizeClass.MEDIUM, in_dim=6, out_dim=3),
        ):
            self.assertEqual(config_param_count(cfg), build_model(cfg).param_count())

    def test_sweep_runs_and_pairs(self) -> None:
        records = degree_width_sweep(self.base, [2, 5], [4, 6], self.scheme, blobs_spec(), show_progress=False)
        self.assertEqual(len(records), 6)
        self.assertTrue(all(r.ok for r in records))
        pairs = matched_parameter_pairs(records, tolerance=0.25)
        self.assertEqual(len(pairs), 2)
        for pair in pairs:
            self.assertIsInstance(pair, MatchedPair)
            self.assertLessEqual(pair.relative_difference, 0.25)
            self.assertEqual(pair.width_run.tags["partner"], pair.degree_run.run_id)
            self.assertNotEqual(pair.width_run.degree, pair.degree_run.degree)


class PairingTests(unittest.TestCase):
    def test_pairs_follow_partner_tags(self) -> None:
        records = [
            make_record("d2", 0.9, tags={"sweep_axis": "degree", "degree": 2}, param_count=1000),
            make_record("d9", 0.9, tags={"sweep_axis": "degree", "degree": 9}, param_count=5000),
            make_record("w8", 0.8, tags={"sweep_axis": "width", "width": 8}, param_count=1000),
            make_record("m9", 0.8, tags={"sweep_axis": "matched", "width": 30, "partner": "d9"}, param_count=5100),
        ]
        pairs = matched_parameter_pairs(records, tolerance=0.05)
        self.assertEqual([(p.degree_run.run_id, p.width_run.run_id) for p in pairs], [("d9", "m9")])
        self.assertAlmostEqual(pairs[0].relative_difference, 0.02)

    def test_partner_outside_tolerance(self) -> None:
        records = [
            make_record("d2", 0.9, tags={"sweep_axis": "degree", "degree": 2}, param_count=1000),
            make_record("m2", 0.8, tags={"sweep_axis": "matched", "width": 3, "partner": "d2"}, param_count=1200),
        ]
        self.assertEqual(matched_parameter_pairs(records, tolerance=0.05), [])
        self.assertEqual(len(matched_parameter_pairs(records, tolerance=0.25)), 1)

    def test_no_width_runs(self) -> None:
        self.assertEqual(matched_parameter_pairs([make_record("d3", 0.9, tags={"sweep_axis": "degree"})]), [])


class SelectionTests(unittest.TestCase):
    def setUp(self) -> None:
        adam = TrainingScheme(optimizer=OptimizerKind.ADAM)
        sgd = TrainingScheme(optimizer=OptimizerKind.SGD)
        self.records = [
            make_record("a", 0.90, gap=0.08, ef=0.10, scheme=adam),
            make_record("b", 0.95, gap=0.04, ef=0.05, scheme=sgd),
            make_record("c", 0.95, gap=0.01, ef=0.20),
            make_record("d", 0.99, gap=0.00, ef=0.90, status="diverged"),
            make_record("e", 0.97, gap=0.10, ef=None, family=Family.MLP),
        ]

    def test_max_accuracy_prefers_earliest_tie(self) -> None:
        self.assertEqual(select_best_record(self.records, family=Family.KAN).run_id, "b")
        self.assertEqual(select_best_record(self.records).run_id, "e")

    def test_min_gap(self) -> None:
        self.assertEqual(select_best_record(self.records, SelectionRule.MIN_GAP).run_id, "c")

    def test_max_efficiency(self) -> None:
        self.assertEqual(select_best_record(self.records, "max-efficiency").run_id, "c")

    def test_best_scheme(self) -> None:
        scheme = select_best_scheme(self.records, family=Family.KAN)
        self.assertEqual(scheme.optimizer, OptimizerKind.SGD)

    def test_no_candidates(self) -> None:
        with self.assertRaises(ConfigError):
            select_best_record(self.records, dataset="mnist")

    def test_scheme_sensitivity(self) -> None:
        rows = scheme_sensitivity(self.records)
        kan = [row for row in rows if row.model.startswith("KAN")][0]
        self.assertEqual(kan.runs, 3)
        self.assertAlmostEqual(kan.minimum, 0.90)
        self.assertAlmostEqual(kan.maximum, 0.95)
        self.assertAlmostEqual(kan.spread, 0.05)

    def test_sensitivity_separates_spline_degrees(self) -> None:
        records = [
            make_record("k2", 0.8, degree=2, grid_size=5, tags={"sweep_axis": "degree", "degree": 2}),
            make_record("k3", 0.9, degree=3, grid_size=5, tags={"sweep_axis": "degree", "degree": 3}),
        ]
        rows = scheme_sensitivity(records)
        self.assertEqual([row.model for row in rows], ["KAN-small[8]-k2G5", "KAN-small[8]-k3G5"])
        self.assertTrue(all(row.runs == 1 for row in rows))


class ActivationSweepTests(unittest.TestCase):
    def test_one_record_per_activation(self) -> None:
        base = ModelConfig(family=Family.KAN, widths=[4], grid_size=3, degree=2)
        scheme = TrainingScheme(lr=1e-3, batch_size=32, max_epochs=1)
        records = activation_sweep(scheme, base, blobs_spec(), seed=7, show_progress=False)
        self.assertEqual([r.activation for r in records], [Activation.GELU, Activation.SILU, Activation.ELU])
        self.assertEqual({r.seed for r in records}, {7})
        self.assertTrue(all(r.tags["sweep_axis"] == "activation" for r in records))


class ExperimentEngineTests(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.engine = ExperimentEngine(Path(self.tmp.name))

    def test_bundled_templates_load(self) -> None:
        experiments = self.engine.list_experiments()
        for name in ("blobs-grid", "mnist-grid", "degree-sweep", "activation-sweep", "hsic-blobs"):
            self.assertIn(name, experiments)
            self.assertEqual(experiments[name]["source"], "template")
        self.assertEqual(len(expand_grid(experiments["blobs-grid"]["experiment"])), 54)

    def test_user_experiment_shadows_template(self) -> None:
        self.engine.user_dir.mkdir(parents=True)
        (self.engine.user_dir / "blobs-grid.yaml").write_text(
            "name: blobs-grid\nmodels:\n  - family: MLP\n", encoding="utf-8"
        )
        cfg = self.engine.load_experiment("blobs-grid")
        self.assertEqual(len(cfg.models), 1)
        self.assertEqual(self.engine.list_experiments()["blobs-grid"]["source"], "user")

    def test_broken_user_file_is_skipped(self) -> None:
        self.engine.user_dir.mkdir(parents=True)
        (self.engine.user_dir / "broken.yaml").write_text("name: [unclosed\n", encoding="utf-8")
        self.assertNotIn("broken", self.engine.list_experiments())

    def test_unknown_experiment(self) -> None:
        with self.assertRaises(ConfigError):
            self.engine.load_experiment("does-not-exist")

    def test_explicit_path(self) -> None:
        path = Path(self.tmp.name) / "custom.yaml"
        path.write_text("models:\n  - family: KAN\n", encoding="utf-8")
        self.assertEqual(self.engine.load_experiment(str(path)).name, "custom")


if __name__ == "__main__":
    unittest.main()
