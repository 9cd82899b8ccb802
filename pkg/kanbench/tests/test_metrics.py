import math
import unittest

import numpy as np

from kanbench.errors import DimensionError, DomainError, EstimationError
from kanbench.metrics import accuracy, efficiency, generalization_gap, twonn_intrinsic_dimension
from kanbench.models import EfficiencyInputs


class AccuracyTests(unittest.TestCase):
    def test_one_hot_of_labels(self) -> None:
        labels = np.array([0, 2, 1, 2])
        self.assertEqual(accuracy(np.eye(3)[labels], labels), 1.0)

    def test_shifted_one_hot(self) -> None:
        labels = np.array([0, 2, 1, 2])
        self.assertEqual(accuracy(np.eye(3)[(labels + 1) % 3], labels), 0.0)

    def test_random_logits_near_chance(self) -> None:
        rng = np.random.default_rng(0)
        value = accuracy(rng.normal(size=(100000, 10)), rng.integers(0, 10, size=100000))
        self.assertAlmostEqual(value, 0.1, delta=0.01)

    def test_ties_go_to_lowest_index(self) -> None:
        self.assertEqual(accuracy(np.zeros((3, 4)), [0, 0, 0]), 1.0)

    def test_permutation_invariant(self) -> None:
        rng = np.random.default_rng(1)
        logits, labels = rng.normal(size=(50, 4)), rng.integers(0, 4, size=50)
        perm = rng.permutation(50)
        self.assertEqual(accuracy(logits, labels), accuracy(logits[perm], labels[perm]))

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(DimensionError):
            accuracy(np.zeros((3, 2)), [0, 1])


class GapTests(unittest.TestCase):
    def test_examples(self) -> None:
        self.assertAlmostEqual(generalization_gap(0.99, 0.97), 0.02)
        self.assertEqual(generalization_gap(0.5, 0.5), 0.0)
        self.assertAlmostEqual(generalization_gap(0.90, 0.95), -0.05)


class EfficiencyTests(unittest.TestCase):
    def test_global_maximum(self) -> None:
        self.assertEqual(efficiency(best_accuracy=1.0, epochs_to_best=0, param_count=50, intrinsic_dimension=50.0), 1.0)

    def test_zero_accuracy(self) -> None:
        self.assertEqual(efficiency(best_accuracy=0.0, epochs_to_best=4, param_count=900, intrinsic_dimension=7.5), 0.0)

    def test_direct_evaluation(self) -> None:
        inputs = EfficiencyInputs(best_accuracy=0.95, epochs_to_best=1, param_count=10,
                                  intrinsic_dimension=10 - (math.e - 1))
        self.assertAlmostEqual(efficiency(inputs), 0.2375, delta=1e-12)

    def test_equals_accuracy_without_training_at_minimal_size(self) -> None:
        self.assertEqual(efficiency(best_accuracy=0.8, epochs_to_best=0, param_count=12, intrinsic_dimension=12.0), 0.8)

    def test_below_intrinsic_dimension(self) -> None:
        with self.assertRaises(DomainError):
            efficiency(best_accuracy=0.9, epochs_to_best=1, param_count=5, intrinsic_dimension=6.0)

    def test_monotone_on_lattice(self) -> None:
        accuracies = np.linspace(0.1, 1.0, 10)
        epochs = range(10)
        sizes = [20 + 37 * i for i in range(10)]

        def ef(a, e, p):
            return efficiency(best_accuracy=float(a), epochs_to_best=e, param_count=p, intrinsic_dimension=20.0)

        for a in accuracies:
            for e in epochs:
                for p in sizes:
                    value = ef(a, e, p)
                    self.assertGreater(value, 0.0)
                    self.assertLessEqual(value, 1.0)
                    if e < 9:
                        self.assertLess(ef(a, e + 1, p), value)
                    if p != sizes[-1]:
                        self.assertLess(ef(a, e, p + 37), value)
                    if a < 1.0:
                        self.assertGreater(ef(min(1.0, a + 0.1), e, p), value)


class TwoNNTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(42)

    def test_uniform_cubes(self) -> None:
        for dim in (2, 5, 10):
            points = self.rng.uniform(size=(2000, dim))
            with self.subTest(dim=dim):
                self.assertAlmostEqual(twonn_intrinsic_dimension(points), dim, delta=0.2 * dim)

    def test_square_embedded_in_ten_dimensions(self) -> None:
        square = self.rng.uniform(size=(2000, 2))
        basis, _ = np.linalg.qr(self.rng.normal(size=(10, 2)))
        estimate = twonn_intrinsic_dimension(square @ basis.T)
        self.assertGreaterEqual(estimate, 1.6)
        self.assertLessEqual(estimate, 2.4)

    def test_points_on_a_line(self) -> None:
        t = self.rng.uniform(-5.0, 5.0, size=(1000, 1))
        estimate = twonn_intrinsic_dimension(t * np.array([[1.0, 2.0, -0.5]]))
        self.assertGreaterEqual(estimate, 0.8)
        self.assertLessEqual(estimate, 1.2)

    def test_zero_variance_coordinates(self) -> None:
        points = self.rng.uniform(size=(2000, 5))
        padded = np.hstack([points, np.full((2000, 3), 0.25)])
        base = twonn_intrinsic_dimension(points)
        self.assertAlmostEqual(twonn_intrinsic_dimension(padded), base, delta=0.05 * base)

    def test_regression_variant(self) -> None:
        points = self.rng.uniform(size=(2000, 5))
        self.assertAlmostEqual(twonn_intrinsic_dimension(points, method="regression"), 5.0, delta=1.0)

    def test_duplicates_are_jittered(self) -> None:
        points = self.rng.uniform(size=(500, 3))
        points[1] = points[0]
        self.assertTrue(math.isfinite(twonn_intrinsic_dimension(points)))

    def test_identical_points(self) -> None:
        with self.assertRaises(EstimationError):
            twonn_intrinsic_dimension(np.ones((50, 3)))

    def test_too_few_points(self) -> None:
        with self.assertRaises(EstimationError):
            twonn_intrinsic_dimension(self.rng.uniform(size=(5, 2)))


if __name__ == "__main__":
    unittest.main()
