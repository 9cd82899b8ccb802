"""HSIC bottleneck: kernel matrices, the biased HSIC estimator and layer-wise training.

Each hidden layer is trained in turn on

    HSIC(Z, X) - beta * HSIC(Z, Y)

where Z are the layer's activations for a batch, X the batch inputs and Y the
one-hot labels. Earlier layers are frozen; afterwards the output layer is fit
on the frozen features with cross-entropy.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from kanbench.data import BatchPlan, Dataset, batch_iter
from kanbench.errors import ConfigError, ContractError, DimensionError, ParameterError
from kanbench.models import HsicConfig, TrainingScheme
from kanbench.nn import Network
from kanbench.optim import create_optimizer
from kanbench.tensor import Graph, Tensor, as_tensor, record_op
from kanbench.trainer import TrainingHistory, dropout_rng, train_head

logger = logging.getLogger(__name__)

MIN_HSIC_BATCH = 4
FALLBACK_SIGMA = 1.0

Matrix = Union["KernelMatrix", np.ndarray]


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise DimensionError(f"kernel matrix must be square, got {self.values.shape}")

    @property
    def size(self) -> int:
        return self.values.shape[0]


def _as_array(x: Union[Tensor, np.ndarray]) -> np.ndarray:
    values = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"expected an [m x d] matrix, got shape {values.shape}")
    return values


def squared_distances(x: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Pairwise squared Euclidean distances with an exact zero diagonal."""
    values = _as_array(x)
    centered = values - values.mean(axis=0)
    sq = np.einsum("ij,ij->i", centered, centered)
    dist = sq[:, None] + sq[None, :] - 2.0 * centered @ centered.T
    dist = np.maximum((dist + dist.T) / 2.0, 0.0)
    np.fill_diagonal(dist, 0.0)
    return dist


def gaussian_kernel_matrix(x: Union[Tensor, np.ndarray], sigma: float) -> KernelMatrix:
    """K_ij = exp(-|x_i - x_j|^2 / (2 sigma^2))."""
    if not sigma > 0:
        raise ParameterError(f"kernel bandwidth must be positive, got {sigma}")
    return KernelMatrix(np.exp(-squared_distances(x) / (2.0 * sigma * sigma)), float(sigma))


def linear_kernel_matrix(y: Union[Tensor, np.ndarray]) -> KernelMatrix:
    values = _as_array(y)
    return KernelMatrix(values @ values.T)


def median_heuristic(x: Union[Tensor, np.ndarray]) -> float:
    """Median of the positive pairwise distances, 1.0 when every point coincides."""
    values = _as_array(x)
    if values.shape[0] < 2:
        raise ParameterError("median heuristic needs at least two points")
    upper = np.triu_indices(values.shape[0], k=1)
    dist = np.sqrt(squared_distances(values)[upper])
    positive = dist[dist > 0]
    if positive.size == 0:
        return FALLBACK_SIGMA
    return float(np.median(positive))


def _center(k: np.ndarray) -> np.ndarray:
    # H K H with H = I - 11^T / m
    return k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()


def _values(k: Matrix) -> np.ndarray:
    return k.values if isinstance(k, KernelMatrix) else np.asarray(k, dtype=np.float64)


def hsic_estimate(k: Matrix, l: Matrix) -> float:
    """Biased estimator tr(K H L H) / (m - 1)^2."""
    kv, lv = _values(k), _values(l)
    if kv.shape != lv.shape or kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise ContractError(f"kernel matrices differ in size: {kv.shape} vs {lv.shape}")
    m = kv.shape[0]
    if m < 2:
        raise ContractError("HSIC needs at least two samples")
    return float(np.sum(_center(kv) * _center(lv)) / (m - 1) ** 2)


def resolve_sigma(x: Union[Tensor, np.ndarray], cfg: HsicConfig) -> float:
    if isinstance(cfg.sigma, str):
        return median_heuristic(x)
    return float(cfg.sigma)


def hsic_bottleneck_loss(
    z: Tensor,
    xb: Union[Tensor, np.ndarray],
    yb: Union[Tensor, np.ndarray],
    cfg: HsicConfig,
) -> Tensor:
    """HSIC(K_Z, K_X) - beta * HSIC(K_Z, K_Y) as a differentiable scalar of Z.

    Bandwidths are computed from the batch and held constant under
    differentiation.
    """
    z = as_tensor(z)
    zv, xv, yv = _as_array(z), _as_array(xb), _as_array(yb)
    m = zv.shape[0]
    if xv.shape[0] != m or yv.shape[0] != m:
        raise ContractError(f"batch sizes differ: Z={m}, X={xv.shape[0]}, Y={yv.shape[0]}")
    if m < 2:
        raise ContractError("HSIC needs at least two samples")

    sigma_z = resolve_sigma(zv, cfg)
    k_z = gaussian_kernel_matrix(zv, sigma_z).values
    k_x = gaussian_kernel_matrix(xv, resolve_sigma(xv, cfg)).values
    k_y = linear_kernel_matrix(yv).values

    # both targets are centered, so sum(K_Z * target) equals the HSIC difference
    target = _center(k_x) - cfg.beta * _center(k_y)
    norm = float((m - 1) ** 2)
    loss = np.sum(k_z * target) / norm

    def vjp(g, needs):
        w = target * k_z
        grad = (-2.0 / (sigma_z * sigma_z * norm)) * (w.sum(axis=1, keepdims=True) * zv - w @ zv)
        return (float(g) * grad,)

    return record_op("hsic-bottleneck", (z,), np.asarray(loss), vjp)


def train_hsic(
    model: Network,
    train: Dataset,
    test: Dataset,
    scheme: TrainingScheme,
    cfg: Optional[HsicConfig] = None,
    seed: int = 0,
) -> TrainingHistory:
    """Layer-wise HSIC bottleneck training followed by a cross-entropy head."""
    cfg = cfg or HsicConfig()
    if not model.hidden_layers:
        raise ConfigError("HSIC training needs a model with at least one hidden layer")
    batch_size = min(scheme.batch_size, len(train))
    if batch_size < MIN_HSIC_BATCH:
        raise ConfigError(f"HSIC training needs batches of at least {MIN_HSIC_BATCH}, got {batch_size}")

    plan = BatchPlan(batch_size=batch_size, seed=seed, drop_last=True)
    rng = dropout_rng(seed)
    history = TrainingHistory()

    for depth, layer in enumerate(model.hidden_layers):
        optimizer = create_optimizer(scheme.optimizer, layer.parameters(), scheme.lr)
        for epoch in range(cfg.layer_epochs):
            total, count = 0.0, 0
            for xb, yb in batch_iter(train, plan, depth * cfg.layer_epochs + epoch):
                inputs = model.features(xb, depth)
                optimizer.zero_grads()
                with Graph() as graph:
                    z = layer.forward(Tensor(inputs), training=True, rng=rng)
                    loss = hsic_bottleneck_loss(z, xb, yb, cfg)
                value = loss.item()
                if not math.isfinite(value):
                    logger.warning("HSIC loss became %s in layer %d; stopping run", value, depth)
                    history.diverged = True
                    return history
                graph.backward(loss)
                optimizer.step()
                total += value
                count += 1
            history.hsic_loss.append(total / count)
            logger.debug("layer %d epoch %d: hsic loss=%.5f", depth, epoch, history.hsic_loss[-1])

    return train_head(model, train, test, scheme, seed, history)
