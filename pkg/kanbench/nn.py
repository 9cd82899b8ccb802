"""KA units, KAN and Perceptron layers, initializers and the model builder."""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from kanbench.errors import ConfigError, ContractError, DimensionError, FormatError, ParameterError
from kanbench.models import Activation, Family, Initialization, ModelConfig
from kanbench.spline import SplineCoeffs, SplineSpec, basis_tensor, make_uniform_knots, spline_eval
from kanbench.tensor import Tensor, add, elementwise, matmul, multiply, no_trace, repeat_columns, transpose

CHECKPOINT_VERSION = 1
_GELU_C = math.sqrt(2.0 / math.pi)


# Activations ---------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def _gelu_grad(x, y):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _silu_grad(x, y):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


ACTIVATIONS: Dict[Activation, Tuple[Callable, Callable]] = {
    Activation.GELU: (_gelu, _gelu_grad),
    Activation.SILU: (lambda x: x * _sigmoid(x), _silu_grad),
    Activation.ELU: (lambda x: np.where(x > 0, x, np.expm1(np.minimum(x, 0.0))),
                     lambda x, y: np.where(x > 0, 1.0, y + 1.0)),
    Activation.RELU: (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    Activation.COSINE: (np.cos, lambda x, y: -np.sin(x)),
    Activation.IDENTITY: (lambda x: x, lambda x, y: np.ones_like(x)),
}


def activate(x: Tensor, activation: Activation) -> Tensor:
    fn, dfn = ACTIVATIONS[Activation(activation)]
    return elementwise(x, fn, dfn, name=Activation(activation).value.lower())


def activation_value(x: float, activation: Activation) -> float:
    fn, _ = ACTIVATIONS[Activation(activation)]
    return float(fn(np.asarray(x, dtype=np.float64)))


def dropout(x: Tensor, prob: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: zero with probability ``prob`` and rescale by 1/(1-prob)."""
    if not training or prob <= 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= prob).astype(np.float64) / (1.0 - prob)
    return multiply(x, Tensor(keep))


# Initializers --------------------------------------------------------------

def kaiming_normal(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> Tensor:
    if fan_in < 1:
        raise ParameterError(f"fan_in must be >= 1, got {fan_in}")
    return Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(shape)))


def kaiming_uniform(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> Tensor:
    if fan_in < 1:
        raise ParameterError(f"fan_in must be >= 1, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)))


def orthogonal(shape: Sequence[int], rng: np.random.Generator, gain: float = 1.0) -> Tensor:
    """Orthonormal rows (rows <= cols) or columns, from QR with sign correction."""
    if len(shape) != 2:
        raise ParameterError(f"orthogonal initialization needs a 2-D shape, got {tuple(shape)}")
    rows, cols = shape
    gaussian = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(gaussian)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    if rows < cols:
        q = q.T
    return Tensor(gain * q)


def initial_weights(
    initialization: Initialization, shape: Sequence[int], fan_in: int, rng: np.random.Generator
) -> Tensor:
    initialization = Initialization(initialization)
    if initialization == Initialization.KAIMING_NORMAL:
        return kaiming_normal(shape, fan_in, rng)
    if initialization == Initialization.KAIMING_UNIFORM:
        return kaiming_uniform(shape, fan_in, rng)
    return orthogonal(shape, rng)


def _coefficient_noise(
    initialization: Initialization, shape: Sequence[int], rng: np.random.Generator
) -> np.ndarray:
    # std 0.1 for the Kaiming schemes, 0.1/sqrt(2) for orthogonal (gain 1 vs sqrt 2)
    gain = 1.0 if initialization == Initialization.ORTHOGONAL else math.sqrt(2.0)
    if initialization == Initialization.KAIMING_UNIFORM:
        unit = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=tuple(shape))
    else:
        unit = rng.standard_normal(tuple(shape))
    return 0.1 * gain / math.sqrt(2.0) * unit


# KA units ------------------------------------------------------------------

@dataclass
class KAUnitParams:
    """phi(x) = w_b * alpha(x) + w_s * sum_i c_i B_i(x)."""

    w_b: float
    w_s: float
    coeffs: SplineCoeffs
    activation: Activation = Activation.GELU


def ka_unit_forward(x: float, params: KAUnitParams, spec: SplineSpec) -> float:
    return params.w_b * activation_value(x, params.activation) + params.w_s * spline_eval(
        x, spec, params.coeffs
    )


class KANLayer:
    """Edge-based KA layer: output_j = sum_i phi_{j,i}(x_i)."""

    def __init__(
        self,
        in_width: int,
        out_width: int,
        spec: SplineSpec,
        activation: Activation = Activation.GELU,
        dropout_prob: float = 0.0,
    ):
        self.in_width = in_width
        self.out_width = out_width
        self.spec = spec
        self.activation = Activation(activation)
        self.dropout_prob = dropout_prob
        nb = spec.basis_count
        self.w_b = Tensor(np.zeros((out_width, in_width)), requires_grad=True)
        self.w_s = Tensor(np.ones((out_width, in_width)), requires_grad=True)
        self.coeffs = Tensor(np.zeros((out_width, in_width * nb)), requires_grad=True)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [("w_b", self.w_b), ("w_s", self.w_s), ("coeffs", self.coeffs)]

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return self.out_width * self.in_width * (self.spec.basis_count + 2)

    def edge(self, j: int, i: int) -> KAUnitParams:
        nb = self.spec.basis_count
        return KAUnitParams(
            w_b=float(self.w_b.values[j, i]),
            w_s=float(self.w_s.values[j, i]),
            coeffs=SplineCoeffs(self.coeffs.values[j, i * nb:(i + 1) * nb].copy()),
            activation=self.activation,
        )

    def initialize(self, initialization: Initialization, rng: np.random.Generator) -> None:
        self.w_b.values[...] = initial_weights(
            initialization, (self.out_width, self.in_width), self.in_width, rng
        ).values
        self.w_s.values[...] = 1.0
        self.coeffs.values[...] = _coefficient_noise(initialization, self.coeffs.shape, rng)

    def forward(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise DimensionError(f"KAN layer expects [batch x {self.in_width}] input, got {x.shape}")
        base = matmul(activate(x, self.activation), transpose(self.w_b))
        weighted = multiply(repeat_columns(self.w_s, self.spec.basis_count), self.coeffs)
        splines = matmul(basis_tensor(x, self.spec), transpose(weighted))
        return dropout(add(base, splines), self.dropout_prob, training, rng)


class DenseLayer:
    """activation(x W^T + b) followed by inverted dropout in training mode."""

    def __init__(
        self,
        in_width: int,
        out_width: int,
        activation: Activation = Activation.RELU,
        dropout_prob: float = 0.0,
    ):
        if not 0.0 <= dropout_prob < 1.0:
            raise ParameterError(f"dropout probability must be in [0, 1), got {dropout_prob}")
        self.in_width = in_width
        self.out_width = out_width
        self.activation = Activation(activation)
        self.dropout_prob = dropout_prob
        self.weight = Tensor(np.zeros((out_width, in_width)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_width), requires_grad=True)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)]

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def param_count(self) -> int:
        return self.out_width * (self.in_width + 1)

    def initialize(self, initialization: Initialization, rng: np.random.Generator) -> None:
        self.weight.values[...] = initial_weights(
            initialization, (self.out_width, self.in_width), self.in_width, rng
        ).values
        self.bias.values[...] = 0.0

    def forward(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise DimensionError(f"dense layer expects [batch x {self.in_width}] input, got {x.shape}")
        out = add(matmul(x, transpose(self.weight)), self.bias)
        if self.activation != Activation.IDENTITY:
            out = activate(out, self.activation)
        return dropout(out, self.dropout_prob, training, rng)


Layer = Union[KANLayer, DenseLayer]


def kan_layer_forward(x: Tensor, layer: KANLayer) -> Tensor:
    return layer.forward(x)


def dense_forward(
    x: Tensor, layer: DenseLayer, training: bool = False, rng: Optional[np.random.Generator] = None
) -> Tensor:
    return layer.forward(x, training=training, rng=rng)


class Network:
    """A stack of hidden layers followed by an output layer producing logits."""

    def __init__(self, config: ModelConfig, layers: List[Layer]):
        self.config = config
        self.layers = layers

    @property
    def hidden_layers(self) -> List[Layer]:
        return self.layers[:-1]

    @property
    def output_layer(self) -> Layer:
        return self.layers[-1]

    def forward(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def features(self, x: Union[Tensor, np.ndarray], depth: int) -> np.ndarray:
        """Eval-mode activations after the first ``depth`` layers, untraced."""
        with no_trace():
            out = x if isinstance(x, Tensor) else Tensor(x)
            for layer in self.layers[:depth]:
                out = layer.forward(out)
        return out.values

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.features(x, len(self.layers))

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [
            (f"layer{i}.{name}", param)
            for i, layer in enumerate(self.layers)
            for name, param in layer.named_parameters()
        ]

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.values.ravel() for p in self.parameters()])

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count():
            raise ContractError(f"expected {self.param_count()} parameters, got {flat.size}")
        offset = 0
        for param in self.parameters():
            n = param.size
            param.values[...] = flat[offset:offset + n].reshape(param.shape)
            offset += n

    def initialize(self, initialization: Initialization, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.initialize(initialization, rng)


def build_model(
    cfg: ModelConfig,
    initialization: Initialization = Initialization.KAIMING_NORMAL,
    rng: Optional[np.random.Generator] = None,
) -> Network:
    """Compose the layer stack described by ``cfg`` and initialize it."""
    if cfg.in_dim is None or cfg.out_dim is None:
        raise ConfigError("model config needs in_dim and out_dim before it can be built")
    widths = cfg.resolved_widths()
    if not widths:
        raise ConfigError("model config has no hidden widths")
    if any(w < 1 for w in widths):
        raise ConfigError(f"hidden widths must be positive, got {widths}")
    activation = cfg.resolved_activation()
    dims = [cfg.in_dim] + widths

    layers: List[Layer] = []
    if cfg.family == Family.KAN:
        spec = make_uniform_knots(cfg.domain, cfg.grid_size, cfg.degree)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            layers.append(KANLayer(fan_in, fan_out, spec, activation, cfg.dropout))
        if cfg.output_layer == "kan":
            layers.append(KANLayer(dims[-1], cfg.out_dim, spec, activation))
        else:
            layers.append(DenseLayer(dims[-1], cfg.out_dim, Activation.IDENTITY))
    else:
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            layers.append(DenseLayer(fan_in, fan_out, activation, cfg.dropout))
        layers.append(DenseLayer(dims[-1], cfg.out_dim, Activation.IDENTITY))

    model = Network(cfg, layers)
    model.initialize(initialization, rng if rng is not None else np.random.default_rng(0))
    return model


def param_count(model: Union[Network, Layer]) -> int:
    return model.param_count()


def save_checkpoint(model: Network, path: Union[str, Path]) -> Path:
    """Write config JSON and the flat float64 parameter vector to an .npz file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(CHECKPOINT_VERSION),
            config=np.array(model.config.model_dump_json()),
            params=model.flat_parameters(),
        )
    return path


def load_checkpoint(path: Union[str, Path]) -> Network:
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            version = int(archive["format_version"])
            config_json = str(archive["config"])
            params = archive["params"].copy()
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"unreadable checkpoint {path}: {exc}") from exc
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig.model_validate(json.loads(config_json))
    model = build_model(cfg)
    model.load_flat_parameters(params)
    return model
