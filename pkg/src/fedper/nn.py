"""Dense feed-forward networks: forward pass, exact backpropagation, and the
mini-batch SGD routine used for local training.

Weights are float64 throughout so that protocol-level equivalence tests can
compare trajectories bitwise.  A network is described by a ModelSpec (see
fedper.model) and carried as two WeightSets: the shared base layers followed
by the client-local personalization layers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

if TYPE_CHECKING:
    from .model import ModelSpec

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: out_dim x in_dim weight matrix plus bias, then activation."""

    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")


@dataclass(frozen=True)
class SgdConfig:
    """Mini-batch SGD hyperparameters for one local training pass."""

    eta: float
    epochs: int
    batch_size: int

    def __post_init__(self) -> None:
        # eta == 0 is allowed: the zero step size is the degenerate no-op case.
        if self.eta < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.eta}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")

    def with_eta(self, eta: float) -> "SgdConfig":
        return replace(self, eta=eta)


@dataclass(frozen=True)
class Sample:
    """One labeled example: feature vector x and non-negative class label y."""

    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError(f"sample features must be 1-D, got shape {x.shape}")
        if self.y < 0:
            raise UsageError(f"class label must be non-negative, got {self.y}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


@dataclass(eq=False)
class WeightSet:
    """Ordered list of (weight matrix, bias vector) pairs, one per layer."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __len__(self) -> int:
        return len(self.layers)

    def copy(self) -> "WeightSet":
        return WeightSet([(w.copy(), b.copy()) for w, b in self.layers])


def weights_equal(a: WeightSet, b: WeightSet) -> bool:
    """Bitwise equality of two weight sets."""
    if len(a) != len(b):
        return False
    for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
        if wa.shape != wb.shape or ba.shape != bb.shape:
            return False
        if wa.tobytes() != wb.tobytes() or ba.tobytes() != bb.tobytes():
            return False
    return True


def weights_blob(ws: WeightSet) -> bytes:
    """Little-endian float64 bytes of all layers, weights then bias each."""
    parts = []
    for w, b in ws.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def weights_checksum(ws: WeightSet) -> str:
    """SHA-256 of the weight blob; equal checksums mean bitwise equal values."""
    return hashlib.sha256(weights_blob(ws)).hexdigest()


def init_weights(layer_specs: Sequence[LayerSpec], rng: np.random.Generator) -> WeightSet:
    """Random initialization: W uniform on +-sqrt(6/(fan_in+fan_out)), biases zero."""
    layers = []
    for spec in layer_specs:
        limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        w = rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim))
        b = np.zeros(spec.out_dim)
        layers.append((w, b))
    return WeightSet(layers)


def check_weights_match(layer_specs: Sequence[LayerSpec], ws: WeightSet, offset: int = 0) -> None:
    """Raise ShapeError (naming the layer index) if ws does not realize the specs."""
    if len(ws) != len(layer_specs):
        raise ShapeError(f"expected {len(layer_specs)} layers starting at index {offset}, got {len(ws)}")
    for i, (spec, (w, b)) in enumerate(zip(layer_specs, ws.layers)):
        if w.shape != (spec.out_dim, spec.in_dim):
            raise ShapeError(
                f"layer {offset + i}: weight shape {w.shape} != expected "
                f"({spec.out_dim}, {spec.in_dim})"
            )
        if b.shape != (spec.out_dim,):
            raise ShapeError(f"layer {offset + i}: bias shape {b.shape} != expected ({spec.out_dim},)")


def _check_model_weights(spec: "ModelSpec", base: WeightSet, personal: WeightSet) -> None:
    if len(base) != spec.k_base or len(personal) != spec.k_personal:
        raise ShapeError(
            f"weight split ({len(base)} base, {len(personal)} personal) does not match "
            f"spec ({spec.k_base} base, {spec.k_personal} personal)"
        )
    check_weights_match(spec.layers[: spec.k_base], base, offset=0)
    check_weights_match(spec.layers[spec.k_base :], personal, offset=spec.k_base)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _forward_batch(
    spec: "ModelSpec", layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Run the stack on a (batch, in_dim) matrix, caching values for backprop.

    Returns (activations, pre_activations) where activations[0] is the input
    and activations[-1] the network output.
    """
    acts = [x]
    pre = []
    for lspec, (w, b) in zip(spec.layers, layers):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(_activate(lspec.activation, z))
    return acts, pre


def _stack_batch(spec: "ModelSpec", batch: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.x for s in batch])
    y = np.array([s.y for s in batch], dtype=np.intp)
    if x.shape[1] != spec.in_dim:
        raise ShapeError(f"layer 0: input dim {x.shape[1]} != expected {spec.in_dim}")
    return x, y


def forward(spec: "ModelSpec", base: WeightSet, personal: WeightSet, x: np.ndarray) -> np.ndarray:
    """Forward pass for a single feature vector; returns the logits."""
    _check_model_weights(spec, base, personal)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.in_dim:
        raise ShapeError(f"layer 0: input shape {x.shape} != expected ({spec.in_dim},)")
    acts, _ = _forward_batch(spec, base.layers + personal.layers, x[None, :])
    return acts[-1][0]


def _loss_grad_arrays(
    spec: "ModelSpec",
    layers: list[tuple[np.ndarray, np.ndarray]],
    x: np.ndarray,
    y: np.ndarray,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Mean softmax cross-entropy and its exact gradients on stacked arrays."""
    acts, pre = _forward_batch(spec, layers, x)
    logits = acts[-1]
    n = logits.shape[0]
    rows = np.arange(n)

    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    expz = np.exp(shifted)
    sums = expz.sum(axis=1, keepdims=True)
    # loss_i = logsumexp(logits_i) - logits_i[y_i], stable form
    loss = float(np.mean(np.log(sums[:, 0]) + zmax[:, 0] - logits[rows, y]))

    probs = expz / sums
    delta = probs
    delta[rows, y] -= 1.0
    delta /= n
    # final layer's activation is part of the chain too
    delta = delta * _activation_grad(spec.layers[-1].activation, pre[-1])

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w) * _activation_grad(spec.layers[i - 1].activation, pre[i - 1])
    return loss, grads


def loss_and_grad(
    spec: "ModelSpec", base: WeightSet, personal: WeightSet, batch: Sequence[Sample]
) -> tuple[float, WeightSet, WeightSet]:
    """Mean cross-entropy over the batch plus exact gradients for both weight sets."""
    if len(batch) == 0:
        raise UsageError("loss_and_grad requires a non-empty batch")
    _check_model_weights(spec, base, personal)
    x, y = _stack_batch(spec, batch)
    loss, grads = _loss_grad_arrays(spec, base.layers + personal.layers, x, y)
    kb = spec.k_base
    return loss, WeightSet(grads[:kb]), WeightSet(grads[kb:])


def minibatch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch's batches: a fresh permutation of range(n) cut into batch_size
    slices, last partial slice included.  Every sample appears exactly once."""
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def sgd(
    spec: "ModelSpec",
    base: WeightSet,
    personal: WeightSet,
    dataset: Sequence[Sample],
    cfg: SgdConfig,
    rng: np.random.Generator,
) -> tuple[WeightSet, WeightSet]:
    """Mini-batch SGD over the dataset for cfg.epochs epochs.

    Each epoch draws a fresh permutation from rng and walks batches of
    cfg.batch_size, updating both weight sets by -eta * gradient.  Inputs are
    not mutated; the updated copies are returned.
    """
    if len(dataset) == 0:
        raise UsageError("sgd requires a non-empty dataset")
    _check_model_weights(spec, base, personal)
    x, y = _stack_batch(spec, dataset)

    layers = [(w.copy(), b.copy()) for w, b in base.layers + personal.layers]
    for _ in range(cfg.epochs):
        for idx in minibatch_indices(len(dataset), cfg.batch_size, rng):
            _, grads = _loss_grad_arrays(spec, layers, x[idx], y[idx])
            for (w, b), (gw, gb) in zip(layers, grads):
                w -= cfg.eta * gw
                b -= cfg.eta * gb
    kb = spec.k_base
    return WeightSet(layers[:kb]), WeightSet(layers[kb:])
