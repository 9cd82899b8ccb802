"""Dataset ingestion (IDX, CSV, synthetic), normalization and batching."""

import csv
import gzip
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from kanbench.errors import (
    ConfigError,
    ConsistencyError,
    FormatError,
    ParameterError,
    ParseError,
    SchemaError,
    StorageError,
)
from kanbench.models import DatasetSpec, Normalization, SyntheticKind, SyntheticSpec

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    split: str = "train"
    label_map: Optional[Dict[str, int]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ConsistencyError(f"features must be a non-empty [N x d] array, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ConsistencyError(
                f"{self.features.shape[0]} feature rows but labels have shape {self.labels.shape}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConsistencyError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, limit: Optional[int]) -> "Dataset":
        """First ``limit`` examples (the whole set when limit is None)."""
        if limit is None or limit >= len(self):
            return self
        return replace(self, features=self.features[:limit], labels=self.labels[:limit])


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    drop_last: bool = False


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# IDX -----------------------------------------------------------------------

def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e


def _parse_idx(raw: bytes, path: Union[str, Path], expected_magic: int) -> np.ndarray:
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an IDX header")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if ndim < 1 or len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    num_classes: Optional[int] = None,
    name: Optional[str] = None,
    split: str = "train",
) -> Dataset:
    """Read an IDX image/label pair (MNIST distribution format, optionally gzipped)."""
    images = _parse_idx(_read_bytes(images_path), images_path, IDX_IMAGES_MAGIC)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64)
    labels = labels.astype(np.int64)
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    logger.debug("Loaded %d IDX examples of dimension %d from %s", len(labels), features.shape[1], images_path)
    return Dataset(features, labels, classes, name or Path(images_path).name, split)


# CSV -----------------------------------------------------------------------

def _numeric_labels(raw_labels: Sequence[str]) -> Optional[np.ndarray]:
    """Integer class codes when every label is numeric, None when any is not."""
    try:
        values = [float(v) for v in raw_labels]
    except ValueError:
        return None
    for row_index, value in enumerate(values, start=1):
        if not np.isfinite(value) or value < 0 or value != int(value):
            raise ParseError(f"label {raw_labels[row_index - 1]!r} is not a non-negative integer", row=row_index)
    return np.array(values, dtype=np.int64)


def load_csv(
    path: Union[str, Path],
    label_column: str,
    feature_columns: Optional[Sequence[str]] = None,
    label_map: Optional[Dict[str, int]] = None,
    name: Optional[str] = None,
    split: str = "train",
) -> Dataset:
    """Read a headed CSV file; labels are integer-coded if numeric, else by sorted value.

    Pass the ``label_map`` of the training split when loading its test split so
    both share one coding.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            if label_column not in header:
                raise SchemaError(f"{path}: label column '{label_column}' not found in header {header}")
            columns = list(feature_columns) if feature_columns else [c for c in header if c != label_column]
            missing = [c for c in columns if c not in header]
            if missing:
                raise SchemaError(f"{path}: feature columns {missing} not found in header")

            rows: List[List[float]] = []
            raw_labels: List[str] = []
            for row_index, row in enumerate(reader, start=1):
                try:
                    values = [float(row[c]) for c in columns]
                except (TypeError, ValueError) as exc:
                    raise ParseError(f"non-numeric feature value ({exc})", row=row_index) from exc
                if not all(np.isfinite(values)):
                    raise ParseError("non-finite feature value", row=row_index)
                rows.append(values)
                raw_labels.append((row[label_column] or "").strip())
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e

    if not rows:
        raise FormatError(f"{path}: no data rows")

    labels = _numeric_labels(raw_labels) if label_map is None else None
    if labels is None:
        if label_map is None:
            label_map = {value: i for i, value in enumerate(sorted(set(raw_labels)))}
        codes = []
        for row_index, value in enumerate(raw_labels, start=1):
            if value not in label_map:
                raise ParseError(f"unknown label {value!r}", row=row_index)
            codes.append(label_map[value])
        labels = np.array(codes, dtype=np.int64)
        classes = len(label_map)
    else:
        classes = int(labels.max()) + 1
    return Dataset(np.array(rows, dtype=np.float64), labels, classes, name or Path(path).stem, split,
                   label_map=label_map)


# Normalization -------------------------------------------------------------

@dataclass
class Normalizer:
    """Per-feature statistics computed on a training split."""

    mode: Normalization
    offset: np.ndarray
    scale: np.ndarray
    constant: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, features: np.ndarray, mode: Normalization = Normalization.MINMAX) -> "Normalizer":
        mode = Normalization(mode)
        if mode == Normalization.MINMAX:
            low, high = features.min(axis=0), features.max(axis=0)
            offset, spread = (low + high) / 2.0, (high - low) / 2.0
        else:
            offset, spread = features.mean(axis=0), features.std(axis=0)
        constant = spread == 0
        return cls(mode, offset, np.where(constant, 1.0, spread), constant)

    def transform(self, features: np.ndarray) -> np.ndarray:
        out = (features - self.offset) / self.scale
        out[:, self.constant] = 0.0
        return out

    def inverse(self, features: np.ndarray) -> np.ndarray:
        return features * self.scale + self.offset

    def apply(self, ds: Dataset) -> Dataset:
        return replace(ds, features=self.transform(ds.features))


def normalize(
    train: Dataset,
    others: Sequence[Dataset] = (),
    mode: Normalization = Normalization.MINMAX,
) -> Tuple[Dataset, List[Dataset], Normalizer]:
    """Fit statistics on ``train`` only and apply them to every split."""
    normalizer = Normalizer.fit(train.features, mode)
    return normalizer.apply(train), [normalizer.apply(ds) for ds in others], normalizer


# Batching ------------------------------------------------------------------

def batch_iter(ds: Dataset, plan: BatchPlan, epoch: int = 0) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (features, one-hot labels) over a permutation fixed by (seed, epoch)."""
    if plan.batch_size < 1:
        raise ParameterError(f"batch size must be >= 1, got {plan.batch_size}")
    n = len(ds)
    if plan.batch_size > n:
        raise ParameterError(f"batch size {plan.batch_size} exceeds dataset size {n}")
    order = np.random.default_rng([plan.seed, epoch]).permutation(n)
    stop = n - n % plan.batch_size if plan.drop_last else n
    for start in range(0, stop, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        yield ds.features[idx], one_hot(ds.labels[idx], ds.num_classes)


# Synthetic -----------------------------------------------------------------

def synthetic_dataset(
    kind: SyntheticKind,
    n: int,
    d: int = 2,
    classes: int = 2,
    seed: int = 0,
    separation: float = 10.0,
) -> Dataset:
    """Deterministic desk-scale fixtures.

    gaussian-blobs: unit-variance clusters whose centers are ``separation``
    apart. two-spirals: two interleaved arms in the first two coordinates.
    uniform-cube: uniform points in [0, 1]^d labelled by slabs of the first
    coordinate.
    """
    kind = SyntheticKind(kind)
    if n < classes:
        raise ParameterError(f"need at least one example per class ({n} < {classes})")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes

    if kind == SyntheticKind.GAUSSIAN_BLOBS:
        if classes <= d:
            centers = np.eye(classes, d) * separation / np.sqrt(2.0)
        else:
            directions = rng.standard_normal((classes, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            centers = directions * separation * classes
        features = centers[labels] + rng.standard_normal((n, d))
    elif kind == SyntheticKind.TWO_SPIRALS:
        classes = 2
        labels = np.arange(n) % 2
        t = np.sqrt(rng.uniform(0.0, 1.0, n)) * 4.0 * np.pi
        sign = np.where(labels == 0, 1.0, -1.0)
        arms = np.stack([sign * t * np.cos(t), sign * t * np.sin(t)], axis=1)
        arms += rng.normal(0.0, 0.2, size=arms.shape)
        features = np.zeros((n, max(d, 2)))
        features[:, :2] = arms
    else:
        features = rng.uniform(0.0, 1.0, size=(n, d))
        labels = np.minimum((features[:, 0] * classes).astype(np.int64), classes - 1)

    return Dataset(features, labels.astype(np.int64), classes, kind.value, "all")


def split_dataset(ds: Dataset, test_fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    order = np.random.default_rng(seed).permutation(len(ds))
    n_test = max(1, int(round(len(ds) * test_fraction)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    train = replace(ds, features=ds.features[train_idx], labels=ds.labels[train_idx], split="train")
    test = replace(ds, features=ds.features[test_idx], labels=ds.labels[test_idx], split="test")
    return train, test


def _resolve(path: Optional[str], field_name: str) -> str:
    if not path:
        raise ConfigError(f"dataset spec is missing '{field_name}'")
    return str(Path(path).expanduser())


def load_dataset(spec: DatasetSpec) -> Tuple[Dataset, Dataset]:
    """Materialize (train, test) splits for a dataset spec, normalized on train."""
    name = spec.display_name
    if spec.kind == "synthetic":
        syn = spec.synthetic or SyntheticSpec()
        full = synthetic_dataset(syn.kind, syn.n, syn.d, syn.classes, syn.seed, syn.separation)
        train, test = split_dataset(full, spec.test_fraction, syn.seed)
    elif spec.kind == "idx":
        train = load_idx(_resolve(spec.train_images, "train_images"), _resolve(spec.train_labels, "train_labels"),
                         name=name, split="train")
        test = load_idx(_resolve(spec.test_images, "test_images"), _resolve(spec.test_labels, "test_labels"),
                        num_classes=train.num_classes, name=name, split="test")
    else:
        if not spec.label_column:
            raise ConfigError("csv dataset spec needs 'label_column'")
        train = load_csv(_resolve(spec.train_csv, "train_csv"), spec.label_column, spec.feature_columns,
                         name=name, split="train")
        if spec.test_csv:
            test = load_csv(_resolve(spec.test_csv, "test_csv"), spec.label_column, spec.feature_columns,
                            label_map=train.label_map, name=name, split="test")
        else:
            train, test = split_dataset(train, spec.test_fraction)
        classes = max(train.num_classes, test.num_classes)
        train, test = replace(train, num_classes=classes), replace(test, num_classes=classes)

    train, test = train.subset(spec.train_limit), test.subset(spec.test_limit)
    train, (test,), _ = normalize(train, [test], spec.normalization)
    train, test = replace(train, name=name), replace(test, name=name)
    logger.info("Dataset %s: %d train / %d test examples, %d features, %d classes",
                name, len(train), len(test), train.dim, train.num_classes)
    return train, test
