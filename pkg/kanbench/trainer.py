"""Backpropagation training loop, evaluation and the frozen-feature head trainer."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from kanbench.data import BatchPlan, Dataset, batch_iter
from kanbench.metrics import accuracy
from kanbench.models import TrainingScheme
from kanbench.nn import Network
from kanbench.optim import create_optimizer
from kanbench.tensor import Graph, Tensor, softmax_cross_entropy

logger = logging.getLogger(__name__)

EVAL_CHUNK = 2048


@dataclass
class TrainingHistory:
    """Per-epoch metrics of one training run."""

    train_accuracy: List[float] = field(default_factory=list)
    test_accuracy: List[float] = field(default_factory=list)
    train_loss: List[Optional[float]] = field(default_factory=list)
    hsic_loss: List[Optional[float]] = field(default_factory=list)
    diverged: bool = False

    @property
    def epochs(self) -> int:
        return len(self.test_accuracy)

    @property
    def best_epoch(self) -> Optional[int]:
        """First epoch reaching the best test accuracy."""
        if not self.test_accuracy:
            return None
        return int(np.argmax(self.test_accuracy))

    @property
    def best_accuracy(self) -> Optional[float]:
        if not self.test_accuracy:
            return None
        return float(max(self.test_accuracy))


def dropout_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def evaluate(model: Network, ds: Dataset, depth: Optional[int] = None) -> float:
    """Eval-mode accuracy of ``model`` on ``ds``; ``depth`` starts from precomputed features."""
    correct = 0.0
    for start in range(0, len(ds), EVAL_CHUNK):
        xb = ds.features[start:start + EVAL_CHUNK]
        if depth is None:
            logits = model.predict(xb)
        else:
            logits = model.output_layer.forward(Tensor(xb)).values
        correct += accuracy(logits, ds.labels[start:start + EVAL_CHUNK]) * len(xb)
    return correct / len(ds)


def _batch_plan(scheme: TrainingScheme, ds: Dataset, seed: int, drop_last: bool = False) -> BatchPlan:
    return BatchPlan(batch_size=min(scheme.batch_size, len(ds)), seed=seed, drop_last=drop_last)


def train_backprop(
    model: Network,
    train: Dataset,
    test: Dataset,
    scheme: TrainingScheme,
    seed: int = 0,
) -> TrainingHistory:
    """Minibatch cross-entropy training of every parameter for ``scheme.max_epochs`` epochs.

    A non-finite loss stops training and marks the history diverged; the
    epochs completed so far are kept.
    """
    optimizer = create_optimizer(scheme.optimizer, model.parameters(), scheme.lr)
    plan = _batch_plan(scheme, train, seed)
    rng = dropout_rng(seed)
    history = TrainingHistory()

    for epoch in range(scheme.max_epochs):
        total, count = 0.0, 0
        for xb, yb in batch_iter(train, plan, epoch):
            optimizer.zero_grads()
            with Graph() as graph:
                logits = model.forward(Tensor(xb), training=True, rng=rng)
                loss = softmax_cross_entropy(logits, Tensor(yb))
            value = loss.item()
            if not math.isfinite(value):
                logger.warning("Loss became %s in epoch %d; stopping run", value, epoch)
                history.diverged = True
                return history
            graph.backward(loss)
            optimizer.step()
            total += value * len(xb)
            count += len(xb)

        history.train_loss.append(total / count)
        history.train_accuracy.append(evaluate(model, train))
        history.test_accuracy.append(evaluate(model, test))
        logger.debug(
            "epoch %d: loss=%.4f train=%.4f test=%.4f",
            epoch, history.train_loss[-1], history.train_accuracy[-1], history.test_accuracy[-1],
        )
    return history


def train_head(
    model: Network,
    train: Dataset,
    test: Dataset,
    scheme: TrainingScheme,
    seed: int = 0,
    history: Optional[TrainingHistory] = None,
) -> TrainingHistory:
    """Train only the output layer with cross-entropy on frozen hidden features."""
    depth = len(model.hidden_layers)
    head = model.output_layer
    train_features = Dataset(model.features(train.features, depth), train.labels, train.num_classes,
                             train.name, train.split)
    test_features = Dataset(model.features(test.features, depth), test.labels, test.num_classes,
                            test.name, test.split)

    optimizer = create_optimizer(scheme.optimizer, head.parameters(), scheme.lr)
    plan = _batch_plan(scheme, train_features, seed)
    rng = dropout_rng(seed)
    history = history if history is not None else TrainingHistory()

    for epoch in range(scheme.max_epochs):
        total, count = 0.0, 0
        for xb, yb in batch_iter(train_features, plan, epoch):
            optimizer.zero_grads()
            with Graph() as graph:
                loss = softmax_cross_entropy(head.forward(Tensor(xb), training=True, rng=rng), Tensor(yb))
            value = loss.item()
            if not math.isfinite(value):
                logger.warning("Head loss became %s in epoch %d; stopping run", value, epoch)
                history.diverged = True
                return history
            graph.backward(loss)
            optimizer.step()
            total += value * len(xb)
            count += len(xb)

        history.train_loss.append(total / count)
        history.train_accuracy.append(evaluate(model, train_features, depth=depth))
        history.test_accuracy.append(evaluate(model, test_features, depth=depth))
        logger.debug("head epoch %d: train=%.4f test=%.4f", epoch,
                     history.train_accuracy[-1], history.test_accuracy[-1])
    return history
