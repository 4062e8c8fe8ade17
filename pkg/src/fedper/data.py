"""Dataset generation, ingestion, and the two heterogeneity regimes:
balanced class-restricted partitions and unbalanced per-user volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ParseError
from .nn import Sample

K_CLASS = "k_class"
UNBALANCED_USERS = "unbalanced_users"
PARTITION_MODES = (K_CLASS, UNBALANCED_USERS)


@dataclass(frozen=True)
class PartitionSpec:
    """How a dataset is spread over clients.

    k_class mode restricts each client to k of the label classes and divides
    every class equally among the clients allowed to sample it.
    unbalanced_users mode draws a per-client volume from volume_range and
    samples that many items (without replacement per client; clients may
    overlap), optionally relabeling per client to model rater disagreement.
    """

    mode: str
    num_clients: int
    k: int = 1
    volume_range: tuple[int, int] = (1, 1)
    train_fraction: float = 0.8
    seed: int = 0
    rater_disagreement: bool = False

    def __post_init__(self) -> None:
        if self.mode not in PARTITION_MODES:
            raise ConfigError(f"unknown partition mode {self.mode!r}; expected one of {PARTITION_MODES}")
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.mode == K_CLASS and self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        lo, hi = self.volume_range
        if self.mode == UNBALANCED_USERS and not 1 <= lo <= hi:
            raise ConfigError(f"volume_range must satisfy 1 <= min <= max, got {self.volume_range}")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


@dataclass
class LabeledDataset:
    """Samples plus the number of label classes; every label is < num_classes."""

    samples: list[Sample]
    num_classes: int

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        for i, s in enumerate(self.samples):
            if s.y >= self.num_classes:
                raise ConfigError(f"sample {i} has label {s.y} >= num_classes {self.num_classes}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=np.intp)


def class_means(num_classes: int, dim: int) -> np.ndarray:
    """Deterministic mixture means, pairwise at least unit-separated:
    class c sits at (1 + c // dim) times basis vector c % dim."""
    means = np.zeros((num_classes, dim))
    for c in range(num_classes):
        means[c, c % dim] = 1.0 + c // dim
    return means


def synth_classification(
    num_classes: int,
    dim: int,
    per_class: int,
    label_permutations: Sequence[Sequence[int]] | None = None,
    seed: int = 0,
    sigma: float = 0.5,
) -> LabeledDataset:
    """Gaussian-mixture classification data, one mean per class.

    label_permutations gives one label bijection per cluster; sample i of a
    class belongs to cluster i % len(label_permutations) and carries that
    cluster's permuted label.  Two clusters with conflicting permutations make
    the same feature region appear under different labels, which is what a
    shared global model cannot resolve.  Samples are ordered by generating
    class, then draw index.
    """
    if num_classes < 1 or dim < 1 or per_class < 1:
        raise ConfigError("num_classes, dim and per_class must all be >= 1")
    perms = [list(range(num_classes))] if label_permutations is None else [list(p) for p in label_permutations]
    for p in perms:
        if sorted(p) != list(range(num_classes)):
            raise ConfigError(f"label permutation {p} is not a bijection of range({num_classes})")

    gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rngmod.DATASET,)))
    means = class_means(num_classes, dim)
    samples = []
    for c in range(num_classes):
        draws = means[c] + sigma * gen.standard_normal((per_class, dim))
        for i in range(per_class):
            cluster = i % len(perms)
            samples.append(Sample(draws[i], perms[cluster][c]))
    return LabeledDataset(samples, num_classes)


def synth_shells(
    num_classes: int,
    dim: int,
    per_class: int,
    seed: int = 0,
    radius_step: float = 1.0,
    noise: float = 0.1,
) -> LabeledDataset:
    """Concentric-shell data: class c lives on the sphere of radius
    (c + 1) * radius_step with radial jitter.  Not linearly separable, so a
    model whose layers are all linear cannot do better than chance on it."""
    if num_classes < 1 or dim < 1 or per_class < 1:
        raise ConfigError("num_classes, dim and per_class must all be >= 1")
    gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rngmod.DATASET,)))
    samples = []
    for c in range(num_classes):
        direction = gen.standard_normal((per_class, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = (c + 1) * radius_step + noise * gen.standard_normal((per_class, 1))
        for row in direction * radius:
            samples.append(Sample(row, c))
    return LabeledDataset(samples, num_classes)


def client_classes(spec: PartitionSpec, num_classes: int) -> list[list[int]]:
    """Deterministic cyclic class assignment: client j gets classes
    {(j*s + i) mod C : 0 <= i < k} with stride s = max(1, C // N)."""
    stride = max(1, num_classes // spec.num_clients)
    return [
        sorted({(j * stride + i) % num_classes for i in range(spec.k)})
        for j in range(spec.num_clients)
    ]


def partition_k_class_indices(ds: LabeledDataset, spec: PartitionSpec) -> list[list[int]]:
    """Sample indices per client for the class-restricted balanced partition.

    Each class's samples are split into equal shares among its eligible
    clients (remainders to the lowest client ids); within-share selection is
    shuffled by the spec seed.  The result is an exact partition of the
    dataset's indices.
    """
    if spec.mode != K_CLASS:
        raise ConfigError(f"partition mode is {spec.mode!r}, expected {K_CLASS!r}")
    if spec.k > ds.num_classes:
        raise ConfigError(f"k={spec.k} exceeds the number of classes {ds.num_classes}")

    assignment = client_classes(spec, ds.num_classes)
    eligible: list[list[int]] = [[] for _ in range(ds.num_classes)]
    for j, classes in enumerate(assignment):
        for c in classes:
            eligible[c].append(j)
    for c, owners in enumerate(eligible):
        if not owners:
            raise ConfigError(
                f"class {c} has no eligible client under N={spec.num_clients}, k={spec.k}; "
                "increase k or num_clients"
            )

    gen = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(rngmod.PARTITION,)))
    labels = ds.labels
    out: list[list[int]] = [[] for _ in range(spec.num_clients)]
    for c in range(ds.num_classes):
        idx = np.flatnonzero(labels == c)
        gen.shuffle(idx)
        owners = eligible[c]
        share, rem = divmod(len(idx), len(owners))
        pos = 0
        for rank, j in enumerate(owners):
            take = share + (1 if rank < rem else 0)
            out[j].extend(int(i) for i in idx[pos : pos + take])
            pos += take
    return out


def partition_k_class(ds: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    """Class-restricted balanced partition; see partition_k_class_indices."""
    return [
        LabeledDataset([ds.samples[i] for i in idx], ds.num_classes)
        for idx in partition_k_class_indices(ds, spec)
    ]


def partition_unbalanced_indices(ds: LabeledDataset, spec: PartitionSpec) -> list[list[int]]:
    """Sample indices per client for the unbalanced per-user regime.

    Client j draws its volume n_j uniformly from volume_range and then n_j
    items without replacement, all from its own seeded stream; different
    clients may overlap.
    """
    if spec.mode != UNBALANCED_USERS:
        raise ConfigError(f"partition mode is {spec.mode!r}, expected {UNBALANCED_USERS!r}")
    lo, hi = spec.volume_range
    if hi > len(ds):
        raise ConfigError(f"volume_range max {hi} exceeds dataset size {len(ds)}")
    out = []
    for j in range(spec.num_clients):
        gen = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(rngmod.PARTITION, j)))
        n_j = int(gen.integers(lo, hi + 1))
        idx = gen.choice(len(ds), size=n_j, replace=False)
        out.append([int(i) for i in idx])
    return out


def partition_unbalanced(ds: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    """Unbalanced per-user partition; with rater_disagreement each client
    relabels its items by a client-specific permutation of the classes."""
    parts = []
    for j, idx in enumerate(partition_unbalanced_indices(ds, spec)):
        samples = [ds.samples[i] for i in idx]
        if spec.rater_disagreement:
            gen = np.random.default_rng(
                np.random.SeedSequence(spec.seed, spawn_key=(rngmod.PARTITION, j, 1))
            )
            relabel = gen.permutation(ds.num_classes)
            samples = [Sample(s.x, int(relabel[s.y])) for s in samples]
        parts.append(LabeledDataset(samples, ds.num_classes))
    return parts


def partition(ds: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    if spec.mode == K_CLASS:
        return partition_k_class(ds, spec)
    return partition_unbalanced(ds, spec)


def partition_indices(ds: LabeledDataset, spec: PartitionSpec) -> list[list[int]]:
    if spec.mode == K_CLASS:
        return partition_k_class_indices(ds, spec)
    return partition_unbalanced_indices(ds, spec)


def train_test_split(
    ds: LabeledDataset, fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle, then ceil(fraction * n) samples to train, rest to test."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"train fraction must be in (0, 1], got {fraction}")
    gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rngmod.SPLIT,)))
    perm = gen.permutation(len(ds))
    n_train = math.ceil(fraction * len(ds))
    train = [ds.samples[int(i)] for i in perm[:n_train]]
    test = [ds.samples[int(i)] for i in perm[n_train:]]
    return LabeledDataset(train, ds.num_classes), LabeledDataset(test, ds.num_classes)


def save_csv(ds: LabeledDataset, path: str | Path) -> None:
    """Write `f0,...,f{d-1},label` rows; floats use repr so a reload is exact."""
    path = Path(path)
    dim = ds.samples[0].x.shape[0] if ds.samples else 0
    lines = [",".join([f"f{i}" for i in range(dim)] + ["label"])]
    for s in ds.samples:
        lines.append(",".join([repr(float(v)) for v in s.x] + [str(s.y)]))
    path.write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path) -> LabeledDataset:
    """Parse a `f0,...,f{d-1},label` CSV into a dataset; C = max label + 1."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[-1].strip() != "label" or any(
        h.strip() != f"f{i}" for i, h in enumerate(header[:-1])
    ):
        raise ParseError(f"{path}: line 1: expected header f0,...,f{{d-1}},label, got {lines[0]!r}")
    dim = len(header) - 1

    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise ParseError(f"{path}: line {lineno}: expected {dim + 1} fields, got {len(fields)}")
        try:
            x = np.array([float(v) for v in fields[:-1]])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: bad feature value: {exc}") from exc
        label_text = fields[-1].strip()
        try:
            y = int(label_text)
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: non-integer label {label_text!r}") from exc
        if y < 0:
            raise ParseError(f"{path}: line {lineno}: negative label {y}")
        samples.append(Sample(x, y))
    if not samples:
        raise ParseError(f"{path}: no data rows")
    num_classes = max(s.y for s in samples) + 1
    return LabeledDataset(samples, num_classes)
