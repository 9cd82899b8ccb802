import os
import unittest
from pathlib import Path

from kanbench.experiments.engine import execute_run, expand_grid
from kanbench.models import (
    DatasetSpec,
    ExperimentConfig,
    GridAxes,
    Initialization,
    ModelConfig,
    OptimizerKind,
)

MNIST_DIR = os.getenv("KANBENCH_MNIST_DIR")
HIDDEN_WIDTHS = [32]


def mnist_spec() -> DatasetSpec:
    root = Path(MNIST_DIR)
    return DatasetSpec(
        kind="idx",
        name="MNIST",
        train_images=str(root / "train-images-idx3-ubyte.gz"),
        train_labels=str(root / "train-labels-idx1-ubyte.gz"),
        test_images=str(root / "t10k-images-idx3-ubyte.gz"),
        test_labels=str(root / "t10k-labels-idx1-ubyte.gz"),
        train_limit=10000,
    )


def single_run(model: ModelConfig, max_epochs: int):
    cfg = ExperimentConfig(
        name="mnist-check",
        dataset=mnist_spec(),
        models=[model],
        grid=GridAxes(initializations=[Initialization.KAIMING_UNIFORM], optimizers=[OptimizerKind.ADAM],
                      learning_rates=[0.001], batch_size=32, max_epochs=max_epochs),
    )
    (spec,) = expand_grid(cfg)
    return execute_run(spec)


@unittest.skipUnless(MNIST_DIR, "KANBENCH_MNIST_DIR is not set")
class MnistSubsetTests(unittest.TestCase):
    def test_mlp_within_three_epochs(self) -> None:
        record = single_run(ModelConfig(family="MLP", widths=HIDDEN_WIDTHS), max_epochs=3)
        self.assertEqual(record.status, "completed", record.error)
        self.assertGreaterEqual(record.best_accuracy, 0.92)

    def test_kan_within_ten_epochs(self) -> None:
        record = single_run(ModelConfig(family="KAN", widths=HIDDEN_WIDTHS), max_epochs=10)
        self.assertEqual(record.status, "completed", record.error)
        self.assertEqual(record.widths, HIDDEN_WIDTHS)
        self.assertGreaterEqual(record.best_accuracy, 0.90)
        self.assertIsNotNone(record.intrinsic_dimension)


if __name__ == "__main__":
    unittest.main()
