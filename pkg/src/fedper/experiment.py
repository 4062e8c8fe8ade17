"""Assembles datasets, partitions, and federation runs into experiments,
including the axis sweeps (heterogeneity level, personalization depth,
algorithm)."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import rng as rngmod
from .data import LabeledDataset, partition, train_test_split
from .errors import ConfigError, UsageError
from .metrics import SweepPoint, SweepResult, cross_client_stats
from .model import ModelSpec
from .nn import Sample
from .protocol import FederationResult, RunConfig, run_federation

AXIS_K = "k"
AXIS_KP = "kp"
AXIS_ALGORITHM = "algorithm"
SWEEP_AXES = (AXIS_K, AXIS_KP, AXIS_ALGORITHM)

_ALGORITHM_CODES = {"fedper": 0, "fedavg": 1}


def client_shards(
    ds: LabeledDataset, partition_spec
) -> list[tuple[list[Sample], list[Sample]]]:
    """Partition the dataset over clients, then split each shard into its own
    train and test sets with a per-client seed derived from the partition seed."""
    shards = partition(ds, partition_spec)
    out = []
    for j, shard in enumerate(shards):
        seed_j = rngmod.derive_seed(partition_spec.seed, rngmod.SPLIT, j)
        train, test = train_test_split(shard, partition_spec.train_fraction, seed_j)
        out.append((train.samples, test.samples))
    return out


def run_experiment(
    cfg: RunConfig,
    ds: LabeledDataset,
    threads: int = 1,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
) -> FederationResult:
    """Partition + split + run_federation, fully determined by cfg and ds."""
    if cfg.spec.out_dim != ds.num_classes:
        raise ConfigError(
            f"model output dim {cfg.spec.out_dim} != dataset classes {ds.num_classes}"
        )
    shards = client_shards(ds, cfg.partition)
    return run_federation(
        cfg, shards, threads=threads, checkpoint_dir=checkpoint_dir, checkpoint_every=checkpoint_every
    )


def sweep_seed(master_seed: int, axis: str, value: int | str) -> int:
    """Per-point master seed, derived from the axis value itself so that
    reordering the values list leaves every point unchanged."""
    code = _ALGORITHM_CODES[value] if axis == AXIS_ALGORITHM else int(value)
    return rngmod.derive_seed(master_seed, rngmod.SWEEP, SWEEP_AXES.index(axis), code)


def sweep_variant(cfg: RunConfig, axis: str, value: int | str) -> RunConfig:
    """The base config with one axis changed and the per-value derived master
    seed.  The resolved partition seed is kept so shards stay comparable."""
    if axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    cfg = replace(cfg, master_seed=sweep_seed(cfg.master_seed, axis, value))
    if axis == AXIS_K:
        return replace(cfg, partition=replace(cfg.partition, k=int(value)))
    if axis == AXIS_KP:
        return replace(cfg, spec=ModelSpec(cfg.spec.layers, int(value)))
    if value not in _ALGORITHM_CODES:
        raise UsageError(f"unknown algorithm {value!r}; expected one of {sorted(_ALGORITHM_CODES)}")
    k_personal = 0 if value == "fedavg" else cfg.spec.k_personal
    return replace(cfg, spec=ModelSpec(cfg.spec.layers, k_personal))


def run_sweep(
    cfg: RunConfig,
    ds: LabeledDataset,
    axis: str,
    values: Sequence[int | str],
    threads: int = 1,
) -> SweepResult:
    """Re-run the experiment once per axis value; points are independent runs
    and come back sorted by value."""
    if len(values) == 0:
        raise UsageError("sweep needs at least one value")
    points = []
    for value in values:
        result = run_experiment(sweep_variant(cfg, axis, value), ds, threads=threads)
        stats = cross_client_stats(result.history.final_accuracies())
        points.append(SweepPoint(value, stats.mean, stats.std, result.history))
    points.sort(key=lambda p: p.value)
    return SweepResult(axis, points)
