"""Model architecture and its partition into base and personalization layers."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ShapeError
from .nn import LayerSpec, WeightSet, check_weights_match


@dataclass(frozen=True)
class ModelSpec:
    """Layer stack plus the split point: the last k_personal layers are
    client-local, the first k_base = len(layers) - k_personal are shared."""

    layers: tuple[LayerSpec, ...]
    k_personal: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) == 0:
            raise ConfigError("model needs at least one layer")
        if self.k_personal < 0:
            raise ConfigError(f"k_personal must be >= 0, got {self.k_personal}")
        if self.k_personal > len(self.layers) - 1:
            raise ConfigError(
                f"k_personal={self.k_personal} leaves no base layer "
                f"(model has {len(self.layers)} layers; at least one must stay shared)"
            )
        for i in range(len(self.layers) - 1):
            if self.layers[i].out_dim != self.layers[i + 1].in_dim:
                raise ConfigError(
                    f"layer {i} out_dim {self.layers[i].out_dim} != "
                    f"layer {i + 1} in_dim {self.layers[i + 1].in_dim}"
                )

    @property
    def k_base(self) -> int:
        return len(self.layers) - self.k_personal

    @property
    def base_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers[: self.k_base]

    @property
    def personal_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers[self.k_base :]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def to_json(self) -> dict:
        return {
            "layers": [
                {"in_dim": l.in_dim, "out_dim": l.out_dim, "activation": l.activation}
                for l in self.layers
            ],
            "k_personal": self.k_personal,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        layers = tuple(
            LayerSpec(int(l["in_dim"]), int(l["out_dim"]), str(l["activation"]))
            for l in obj["layers"]
        )
        return cls(layers, int(obj["k_personal"]))


@dataclass
class PartitionedWeights:
    """A weight set cut at the spec's split point."""

    base: WeightSet
    personal: WeightSet


def split(weights: WeightSet, spec: ModelSpec) -> PartitionedWeights:
    """Cut a full weight set into base (first k_base layers) and personal
    (last k_personal layers) halves.  Lossless; join() inverts it."""
    check_weights_match(spec.layers, weights)
    kb = spec.k_base
    return PartitionedWeights(
        base=WeightSet([(w.copy(), b.copy()) for w, b in weights.layers[:kb]]),
        personal=WeightSet([(w.copy(), b.copy()) for w, b in weights.layers[kb:]]),
    )


def join(p: PartitionedWeights) -> WeightSet:
    """Concatenate base and personal halves back into one weight set."""
    layers = p.base.layers + p.personal.layers
    for i in range(len(layers) - 1):
        w_here, _ = layers[i]
        w_next, _ = layers[i + 1]
        if w_next.shape[1] != w_here.shape[0]:
            raise ShapeError(
                f"layer {i} out_dim {w_here.shape[0]} incompatible with "
                f"layer {i + 1} in_dim {w_next.shape[1]}"
            )
    return WeightSet([(w.copy(), b.copy()) for w, b in layers])


def linearize_base(spec: ModelSpec) -> ModelSpec:
    """Ablation: collapse all base layers into a single identity-activation
    dense layer from the input dim to whatever the personal stack expects."""
    if spec.k_personal > 0:
        target = spec.personal_layers[0].in_dim
    else:
        target = spec.layers[-1].out_dim
    new_base = LayerSpec(spec.in_dim, target, "identity")
    return ModelSpec((new_base,) + spec.personal_layers, spec.k_personal)
