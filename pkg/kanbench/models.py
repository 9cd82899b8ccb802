"""Data models for kanbench using Pydantic."""

from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

CONFIG_VERSION = 1


class Family(str, Enum):
    KAN = "KAN"
    MLP = "MLP"
    MLP_WIDE = "MLP-wide"


class SizeClass(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class Activation(str, Enum):
    GELU = "GELU"
    SILU = "SiLU"
    ELU = "ELU"
    RELU = "ReLU"
    COSINE = "Cosine"
    IDENTITY = "Identity"


class Initialization(str, Enum):
    KAIMING_NORMAL = "kaiming-normal"
    KAIMING_UNIFORM = "kaiming-uniform"
    ORTHOGONAL = "orthogonal"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    SGD_M = "sgd-m"
    ADAM = "adam"


class TrainerKind(str, Enum):
    BACKPROP = "backprop"
    HSIC = "hsic"


class Normalization(str, Enum):
    MINMAX = "minmax"
    ZSCORE = "zscore"


class SyntheticKind(str, Enum):
    GAUSSIAN_BLOBS = "gaussian-blobs"
    TWO_SPIRALS = "two-spirals"
    UNIFORM_CUBE = "uniform-cube"


class SelectionRule(str, Enum):
    MAX_ACCURACY = "max-accuracy"
    MIN_GAP = "min-gap"
    MAX_EFFICIENCY = "max-efficiency"


# Hidden widths per size class, overridable through ModelConfig.widths
SIZE_CLASS_WIDTHS: Dict[SizeClass, List[int]] = {
    SizeClass.SMALL: [128],
    SizeClass.MEDIUM: [256, 128],
    SizeClass.LARGE: [512, 256, 128],
}

DEFAULT_ACTIVATION: Dict[Family, Activation] = {
    Family.KAN: Activation.GELU,
    Family.MLP: Activation.RELU,
    Family.MLP_WIDE: Activation.RELU,
}


class ModelConfig(BaseModel):
    """Layer-structured description of a KAN or Perceptron network."""
    model_config = ConfigDict(extra="forbid")

    family: Family
    size_class: SizeClass = SizeClass.SMALL
    in_dim: Optional[int] = Field(default=None, ge=1)
    out_dim: Optional[int] = Field(default=None, ge=1)
    widths: Optional[List[int]] = None
    degree: int = Field(default=3, ge=0)
    grid_size: int = Field(default=5, ge=1)
    activation: Optional[Activation] = None
    dropout: float = Field(default=0.2, ge=0.0, lt=1.0)
    output_layer: Literal["kan", "linear"] = "kan"
    domain: Tuple[float, float] = (-1.0, 1.0)

    def resolved_widths(self) -> List[int]:
        """Hidden widths; MLP-wide doubles every width of its size class."""
        base = list(self.widths) if self.widths is not None else list(SIZE_CLASS_WIDTHS[self.size_class])
        if self.family == Family.MLP_WIDE:
            return [2 * w for w in base]
        return base

    def resolved_activation(self) -> Activation:
        return self.activation or DEFAULT_ACTIVATION[self.family]

    def with_dims(self, in_dim: int, out_dim: int) -> "ModelConfig":
        return self.model_copy(update={"in_dim": in_dim, "out_dim": out_dim})

    @property
    def label(self) -> str:
        widths = "x".join(str(w) for w in self.resolved_widths())
        if self.family == Family.KAN:
            return f"{self.family.value}-{self.size_class.value}[{widths}]-k{self.degree}G{self.grid_size}"
        return f"{self.family.value}-{self.size_class.value}[{widths}]"


class TrainingScheme(BaseModel):
    """{initialization, optimizer, initial learning rate, batch size, stopping criterion}."""
    model_config = ConfigDict(extra="forbid")

    initialization: Initialization = Initialization.KAIMING_NORMAL
    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr: float = Field(default=5e-4, ge=0.0)
    batch_size: int = Field(default=128, ge=1)
    max_epochs: int = Field(default=30, ge=1)
    trainer: TrainerKind = TrainerKind.BACKPROP

    @property
    def label(self) -> str:
        return f"{self.initialization.value}/{self.optimizer.value}/lr={self.lr:g}"


class HsicConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = Field(default=100.0, gt=0.0)
    sigma: Union[Literal["median-heuristic"], float] = "median-heuristic"
    layer_epochs: int = Field(default=5, ge=1)

    @field_validator("sigma")
    @classmethod
    def _positive_sigma(cls, value):
        if not isinstance(value, str) and value <= 0:
            raise ValueError("fixed sigma must be positive")
        return value


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: SyntheticKind = SyntheticKind.GAUSSIAN_BLOBS
    n: int = Field(default=600, ge=2)
    d: int = Field(default=8, ge=1)
    classes: int = Field(default=2, ge=1)
    seed: int = Field(default=0, ge=0)
    separation: float = Field(default=10.0, gt=0.0)


class DatasetSpec(BaseModel):
    """Where a dataset comes from and how it is prepared."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["synthetic", "idx", "csv"] = "synthetic"
    name: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    label_column: Optional[str] = None
    feature_columns: Optional[List[str]] = None
    train_limit: Optional[int] = Field(default=10000, ge=1)
    test_limit: Optional[int] = Field(default=None, ge=1)
    test_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    normalization: Normalization = Normalization.MINMAX

    @property
    def display_name(self) -> str:
        if self.name:
            return self.name
        if self.kind == "synthetic":
            return (self.synthetic or SyntheticSpec()).kind.value
        return self.kind


class GridAxes(BaseModel):
    model_config = ConfigDict(extra="forbid")

    initializations: List[Initialization] = Field(default_factory=lambda: list(Initialization))
    optimizers: List[OptimizerKind] = Field(default_factory=lambda: list(OptimizerKind))
    learning_rates: List[float] = Field(default_factory=lambda: [0.05, 0.005, 0.0005])
    batch_size: int = Field(default=128, ge=1)
    max_epochs: int = Field(default=30, ge=1)


class SweepConfig(BaseModel):
    """Axes of the degree/width/depth and activation sweeps."""
    model_config = ConfigDict(extra="forbid")

    degrees: List[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])
    widths: List[int] = Field(default_factory=lambda: [8, 16, 32, 64])
    depths: List[int] = Field(default_factory=list)
    activations: List[Activation] = Field(
        default_factory=lambda: [Activation.GELU, Activation.SILU, Activation.ELU]
    )
    scheme: TrainingScheme = Field(
        default_factory=lambda: TrainingScheme(
            initialization=Initialization.KAIMING_NORMAL, optimizer=OptimizerKind.ADAM, lr=1e-4
        )
    )
    selection_rule: SelectionRule = SelectionRule.MAX_ACCURACY


class ExperimentConfig(BaseModel):
    """A versioned experiment definition, usually loaded from YAML."""
    model_config = ConfigDict(extra="forbid")

    version: int = CONFIG_VERSION
    name: str
    description: str = ""
    author: Optional[str] = None
    tags: List[str] = Field(default_factory=list)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    models: List[ModelConfig]
    grid: GridAxes = Field(default_factory=GridAxes)
    trainer: TrainerKind = TrainerKind.BACKPROP
    hsic: HsicConfig = Field(default_factory=HsicConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    seeds: List[int] = Field(default_factory=lambda: [0])
    intrinsic_dimension: Optional[float] = Field(default=None, ge=0.0)
    output_dir: str = "results"
    workers: int = Field(default=1, ge=1)


class RunSpec(BaseModel):
    """One fully determined training run."""
    index: int
    run_id: str
    dataset: DatasetSpec
    model: ModelConfig
    scheme: TrainingScheme
    seed: int
    hsic: HsicConfig = Field(default_factory=HsicConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    intrinsic_dimension: Optional[float] = None
    tags: Dict[str, Union[str, float, int]] = Field(default_factory=dict)


class RunRecord(BaseModel):
    """Outcome of one run with its full per-epoch history."""
    run_id: str
    dataset: str
    family: Family
    size_class: SizeClass
    widths: List[int]
    degree: Optional[int] = None
    grid_size: Optional[int] = None
    activation: Activation
    scheme: TrainingScheme
    seed: int
    tags: Dict[str, Union[str, float, int]] = Field(default_factory=dict)
    status: Literal["completed", "diverged", "failed"] = "completed"
    error: Optional[str] = None
    train_accuracy: List[float] = Field(default_factory=list)
    test_accuracy: List[float] = Field(default_factory=list)
    train_loss: List[Optional[float]] = Field(default_factory=list)
    hsic_loss: List[Optional[float]] = Field(default_factory=list)
    best_accuracy: Optional[float] = None
    best_epoch: Optional[int] = None
    param_count: int = 0
    intrinsic_dimension: Optional[float] = None
    efficiency: Optional[float] = None
    gap_at_best: Optional[float] = None
    final_gap: Optional[float] = None
    wall_seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "completed"

    @property
    def model_label(self) -> str:
        widths = "x".join(str(w) for w in self.widths)
        if self.family == Family.KAN and self.degree is not None:
            return f"{self.family.value}-{self.size_class.value}[{widths}]-k{self.degree}G{self.grid_size}"
        return f"{self.family.value}-{self.size_class.value}[{widths}]"


class EfficiencyInputs(BaseModel):
    best_accuracy: float = Field(ge=0.0, le=1.0)
    epochs_to_best: int = Field(ge=0)
    param_count: int = Field(ge=0)
    intrinsic_dimension: float = Field(ge=0.0)


class Settings(BaseModel):
    """User settings stored in ~/.config/kanbench/config.yaml."""
    workers: int = Field(default=1, ge=1)
    results_dir: str = "results"
    log_level: str = "INFO"
