"""Dataset loading: CSV tables, IDX image files, bundled corpora, and the
synthetic two-arcs problem, plus seeded splitting and standardization."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .rng import stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATASET_NAMES = ("iris", "mnist", "digits", "two-arcs", "csv")


class DataError(ValueError):
    """Malformed file, bad spec, or invalid request against a source."""


@dataclass
class DatasetSpec:
    name: str
    path: str | None = None           # csv source
    data_dir: str | None = None       # directory holding mnist IDX files
    size: int | None = None           # subsample to this many samples
    n_samples: int = 1000             # two-arcs only
    noise: float = 0.15               # two-arcs only
    seed: int = 0
    fractions: tuple[float, float, float] | None = None  # train/val/test

    def resolved_fractions(self) -> tuple[float, float, float]:
        if self.fractions is not None:
            return self.fractions
        return {
            "iris": (11 / 15, 1 / 15, 3 / 15),      # 110 / 10 / 30
            "two-arcs": (0.7, 0.1, 0.2),            # 700 / 100 / 200 at n=1000
            "digits": (0.6, 0.1, 0.3),
            "mnist": (0.8, 0.1, 0.1),
            "csv": (0.7, 0.1, 0.2),
        }[self.name]


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    n_classes: int
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = "synthetic"
    seed: int = 0
    standardization: dict | None = None

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def split_arrays(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.x[idx], self.y[idx]


def load_csv(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Feature table with header f0..f{d-1},label and integer labels 0..K-1."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    d = len(header) - 1
    expected = [f"f{i}" for i in range(d)] + ["label"]
    if d < 1 or header != expected:
        raise DataError(f"{path}: malformed header {header!r}; "
                        f"expected f0..f{d - 1},label")
    rows, labels = [], []
    for ln, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != d + 1:
            raise DataError(f"{path}:{ln}: expected {d + 1} columns")
        try:
            rows.append([float(c) for c in cells[:-1]])
            labels.append(int(cells[-1]))
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: {exc}") from exc
    y = np.asarray(labels, dtype=np.intp)
    if y.min() < 0:
        raise DataError(f"{path}: negative label")
    k = int(y.max()) + 1
    return np.asarray(rows, dtype=np.float64), y, k


def _read_be_u32(f) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise DataError("truncated IDX header")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray, int]:
    """Big-endian IDX pair; pixel values are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f)
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(f"{images_path}: image magic mismatch "
                            f"(got {magic:#010x}, want {IDX_IMAGE_MAGIC:#010x})")
        n, rows, cols = (_read_be_u32(f) for _ in range(3))
        pixels = np.frombuffer(f.read(n * rows * cols), dtype=np.uint8)
        if pixels.size != n * rows * cols:
            raise DataError(f"{images_path}: truncated pixel data")
    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f)
        if magic != IDX_LABEL_MAGIC:
            raise DataError(f"{labels_path}: label magic mismatch "
                            f"(got {magic:#010x}, want {IDX_LABEL_MAGIC:#010x})")
        n_labels = _read_be_u32(f)
        labels = np.frombuffer(f.read(n_labels), dtype=np.uint8)
        if labels.size != n_labels:
            raise DataError(f"{labels_path}: truncated label data")
    if n_labels != n:
        raise DataError(f"image/label counts disagree ({n} vs {n_labels})")
    x = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.intp)
    return x, y, int(y.max()) + 1


def make_two_arcs(n: int, noise: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaving half-circle classes with Gaussian feature noise."""
    if n < 2:
        raise DataError("two-arcs needs at least 2 samples")
    n0 = n - n // 2
    n1 = n // 2
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    x = np.concatenate([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    y = np.concatenate([np.zeros(n0, dtype=np.intp), np.ones(n1, dtype=np.intp)])
    rng = stream(seed, "data")
    x = x + rng.normal(0.0, noise, size=x.shape)
    return x, y


def _resource_path(name: str):
    return resources.files("dmle_lab").joinpath("resources", name)


def load_dataset(spec: DatasetSpec) -> Dataset:
    """Materialise the raw dataset (no splits yet), subsampled if asked."""
    if spec.name not in DATASET_NAMES:
        raise DataError(f"unknown dataset {spec.name!r}; valid: {DATASET_NAMES}")
    if spec.name == "iris":
        with resources.as_file(_resource_path("iris.csv")) as p:
            x, y, k = load_csv(p)
        provenance = "csv"
    elif spec.name == "digits":
        with resources.as_file(_resource_path("digits-images.idx3")) as pi, \
                resources.as_file(_resource_path("digits-labels.idx1")) as pl:
            x, y, k = load_idx(pi, pl)
        provenance = "idx"
    elif spec.name == "mnist":
        base = Path(spec.data_dir) if spec.data_dir else Path("data/mnist")
        images = base / "train-images-idx3-ubyte"
        labels = base / "train-labels-idx1-ubyte"
        if not images.exists() or not labels.exists():
            raise DataError(
                f"mnist IDX files not found under {base}; expected "
                "train-images-idx3-ubyte and train-labels-idx1-ubyte")
        x, y, k = load_idx(images, labels)
        provenance = "idx"
    elif spec.name == "two-arcs":
        x, y = make_two_arcs(spec.n_samples, spec.noise, spec.seed)
        k = 2
        provenance = "synthetic"
    else:  # csv
        if not spec.path:
            raise DataError("csv dataset requires a path")
        x, y, k = load_csv(spec.path)
        provenance = "csv"
    if spec.size is not None:
        if spec.size > x.shape[0]:
            raise DataError(f"requested {spec.size} samples but source has {x.shape[0]}")
        pick = stream(spec.seed, "subsample").choice(x.shape[0], size=spec.size,
                                                     replace=False)
        pick.sort()
        x, y = x[pick], y[pick]
    return Dataset(x=x, y=y, n_classes=k, provenance=provenance, seed=spec.seed)


def make_splits(dataset: Dataset, fractions: tuple[float, float, float],
                seed: int) -> Dataset:
    """Disjoint seeded splits; features standardized with train statistics."""
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) <= 0 or f_train + f_val + f_test > 1 + 1e-9:
        raise DataError("fractions must be positive and sum to at most 1")
    n = dataset.n_samples
    # epsilon guards float floor, e.g. 150 * (11/15) = 109.999...
    sizes = (int(n * f_train + 1e-9), int(n * f_val + 1e-9), int(n * f_test + 1e-9))
    if min(sizes) < 1:
        raise DataError(f"split smaller than 1 sample for n={n}, {fractions}")
    perm = stream(seed, "splits").permutation(n)
    train = np.sort(perm[:sizes[0]])
    val = np.sort(perm[sizes[0]:sizes[0] + sizes[1]])
    test = np.sort(perm[sizes[0] + sizes[1]:sizes[0] + sizes[1] + sizes[2]])

    mean = dataset.x[train].mean(axis=0)
    std = dataset.x[train].std(axis=0)
    divisor = np.where(std > 1e-12, std, 1.0)  # constant columns map to zero
    x = (dataset.x - mean) / divisor
    return Dataset(x=x, y=dataset.y, n_classes=dataset.n_classes,
                   splits={"train": train, "val": val, "test": test},
                   provenance=dataset.provenance, seed=dataset.seed,
                   standardization={"mean": mean, "std": divisor})


def build_dataset(spec: DatasetSpec) -> Dataset:
    """Load, subsample, split, and standardize in one deterministic step."""
    return make_splits(load_dataset(spec), spec.resolved_fractions(), spec.seed)
