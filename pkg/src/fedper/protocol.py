"""Federation protocol: client and server state machines, the round loop,
sample-weighted aggregation, and the optional personal-layer fine-tuning pass.

Communication is in-process.  Every exchange is appended to the server's
message log as (sender, receiver, payload kind), which makes the privacy
contract checkable: personalization weights must never appear on the wire,
so no log entry may carry the personal-weights kind.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from . import rng as rngmod
from .errors import ConfigError, ProtocolError, UsageError
from .checkpoint import save_weights
from .data import PartitionSpec
from .metrics import ClientMetrics, evaluate
from .model import ModelSpec
from .nn import (
    Sample,
    SgdConfig,
    WeightSet,
    _loss_grad_arrays,
    _stack_batch,
    init_weights,
    minibatch_indices,
    sgd,
    weights_checksum,
)

SERVER = "server"

MSG_TRAIN_SIZE = "train_size"
MSG_BASE_WEIGHTS = "base_weights"
# Defined so the privacy scan has a referent; the engine never sends it.
MSG_PERSONAL_WEIGHTS = "personal_weights"


def client_name(client_id: int) -> str:
    return f"client/{client_id}"


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    kind: str


@dataclass
class ClientState:
    """One simulated device: its data, its private personalization weights,
    and its handle on the seed hierarchy."""

    client_id: int
    train: list[Sample]
    test: list[Sample]
    personal: WeightSet
    sgd: SgdConfig
    stream: rngmod.PartyStream
    eta_schedule: Callable[[int], float] | None = None

    def __post_init__(self) -> None:
        if len(self.train) < 1:
            raise ConfigError(f"client {self.client_id} has an empty training set")

    @property
    def n_train(self) -> int:
        return len(self.train)

    def eta_for_round(self, round_idx: int) -> float:
        if self.eta_schedule is not None:
            return self.eta_schedule(round_idx)
        return self.sgd.eta


@dataclass
class ServerState:
    """Global base weights, the per-client aggregation weights, and the log
    of every message exchanged."""

    base: WeightSet
    agg_weights: list[float]
    message_log: list[Message] = field(default_factory=list)

    def log(self, sender: str, receiver: str, kind: str) -> None:
        self.message_log.append(Message(sender, receiver, kind))

    def personal_payload_count(self) -> int:
        return sum(1 for m in self.message_log if m.kind == MSG_PERSONAL_WEIGHTS)


@dataclass(frozen=True)
class RunConfig:
    spec: ModelSpec
    num_clients: int
    rounds: int
    sgd: SgdConfig
    fine_tune: bool
    master_seed: int
    partition: PartitionSpec

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")


@dataclass(frozen=True)
class RoundRecord:
    round_idx: int
    base_checksum: str
    clients: tuple[ClientMetrics, ...]


@dataclass(frozen=True)
class RoundHistory:
    rounds: tuple[RoundRecord, ...]

    def __len__(self) -> int:
        return len(self.rounds)

    def final_accuracies(self) -> list[float]:
        return [m.test_accuracy for m in self.rounds[-1].clients]


@dataclass
class FederationResult:
    history: RoundHistory
    server: ServerState
    clients: list[ClientState]


def server_init(cfg: RunConfig, client_sizes: Sequence[int]) -> ServerState:
    """Initialize global base weights from the server's stream and compute the
    aggregation weights n_j / sum(n) once, up front."""
    if len(client_sizes) != cfg.num_clients:
        raise ConfigError(f"got {len(client_sizes)} client sizes for {cfg.num_clients} clients")
    for j, n in enumerate(client_sizes):
        if n < 1:
            raise ConfigError(f"client {j} reports {n} training samples; every client needs >= 1")
    total = sum(client_sizes)
    agg_weights = [n / total for n in client_sizes]
    server_stream = rngmod.PartyStream(cfg.master_seed, rngmod.SERVER_PARTY)
    base = init_weights(cfg.spec.base_layers, server_stream.rng(0, rngmod.INIT))
    state = ServerState(base=base, agg_weights=agg_weights)
    for j in range(cfg.num_clients):
        state.log(client_name(j), SERVER, MSG_TRAIN_SIZE)
    return state


def make_client(
    cfg: RunConfig, client_id: int, train: Sequence[Sample], test: Sequence[Sample]
) -> ClientState:
    """Build a client with personalization weights drawn from its own stream."""
    stream = rngmod.PartyStream(cfg.master_seed, rngmod.client_party(client_id))
    personal = init_weights(cfg.spec.personal_layers, stream.rng(0, rngmod.INIT))
    return ClientState(
        client_id=client_id,
        train=list(train),
        test=list(test),
        personal=personal,
        sgd=cfg.sgd,
        stream=stream,
    )


def client_round(
    client: ClientState, spec: ModelSpec, base_in: WeightSet, round_idx: int
) -> tuple[WeightSet, ClientState]:
    """One local training pass: SGD jointly updates the received base weights
    and the client's personal weights.  Only the updated base is returned for
    the wire; the personal update stays in the returned client state."""
    if len(base_in) != spec.k_base:
        raise ProtocolError(
            f"client {client.client_id}: received {len(base_in)} base layers, expected {spec.k_base}"
        )
    cfg = client.sgd.with_eta(client.eta_for_round(round_idx))
    gen = client.stream.rng(round_idx, rngmod.SGD)
    base_out, personal_out = sgd(spec, base_in, client.personal, client.train, cfg, gen)
    return base_out, replace(client, personal=personal_out)


def fine_tune(
    client: ClientState, spec: ModelSpec, base_in: WeightSet, round_idx: int
) -> ClientState:
    """One epoch of SGD on the personal layers only, base frozen in place.

    Base gradients are computed (they are part of the chain) but never
    applied, so base_in is returned to the caller untouched.
    """
    if spec.k_personal < 1:
        raise UsageError("fine_tune requires at least one personalization layer")
    if len(base_in) != spec.k_base:
        raise ProtocolError(
            f"client {client.client_id}: received {len(base_in)} base layers, expected {spec.k_base}"
        )
    eta = client.eta_for_round(round_idx)
    gen = client.stream.rng(round_idx, rngmod.FINE_TUNE)
    x, y = _stack_batch(spec, client.train)
    personal = [(w.copy(), b.copy()) for w, b in client.personal.layers]
    kb = spec.k_base
    for idx in minibatch_indices(len(client.train), client.sgd.batch_size, gen):
        _, grads = _loss_grad_arrays(spec, base_in.layers + personal, x[idx], y[idx])
        for (w, b), (gw, gb) in zip(personal, grads[kb:]):
            w -= eta * gw
            b -= eta * gb
    return replace(client, personal=WeightSet(personal))


def aggregate(updates: Sequence[tuple[WeightSet, float]]) -> WeightSet:
    """Convex combination of the clients' base updates, accumulated in the
    given (ascending client id) order.

    Computed as w0 + sum_j g_j * (w_j - w0): algebraically the same weighted
    mean, but exactly a fixed point when every update is identical, and a
    fixed floating-point order keeps it bitwise deterministic.
    """
    if len(updates) == 0:
        raise ProtocolError("aggregate needs at least one update")
    gamma_sum = sum(g for _, g in updates)
    if abs(gamma_sum - 1.0) > 1e-12:
        raise ConfigError(f"aggregation weights sum to {gamma_sum!r}, expected 1 within 1e-12")
    for _, g in updates:
        if g <= 0:
            raise ConfigError(f"aggregation weights must be positive, got {g}")
    first, _ = updates[0]
    shapes = [(w.shape, b.shape) for w, b in first.layers]
    for ws, _ in updates[1:]:
        if [(w.shape, b.shape) for w, b in ws.layers] != shapes:
            raise ProtocolError("aggregate requires shape-identical weight sets")

    out = first.copy()
    for ws, g in updates[1:]:
        for (ow, ob), (w, b), (fw, fb) in zip(out.layers, ws.layers, first.layers):
            ow += g * (w - fw)
            ob += g * (b - fb)
    return out


def run_federation(
    cfg: RunConfig,
    client_data: Sequence[tuple[Sequence[Sample], Sequence[Sample]]],
    threads: int = 1,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
) -> FederationResult:
    """Run the full protocol: per round, broadcast the base weights, train all
    clients locally (optionally fine-tuning personal layers first), aggregate
    the base updates in client-id order, and record per-client metrics.

    Metrics are recorded after local training and aggregation, before the
    next broadcast: each client is scored with the round's aggregated base
    plus its own personal weights, the pair the personalized risk is defined
    on.  Clients may run concurrently (threads > 1); per-(party, round,
    purpose) rng substreams make the result schedule-independent.
    """
    if len(client_data) != cfg.num_clients:
        raise ConfigError(f"got {len(client_data)} client datasets for {cfg.num_clients} clients")
    spec = cfg.spec
    clients = [make_client(cfg, j, train, test) for j, (train, test) in enumerate(client_data)]
    for c in clients:
        if len(c.test) < 1:
            raise ConfigError(f"client {c.client_id} has an empty test set")
    server = server_init(cfg, [c.n_train for c in clients])

    records = []
    for round_idx in range(1, cfg.rounds + 1):
        base_in = server.base
        for j in range(cfg.num_clients):
            server.log(SERVER, client_name(j), MSG_BASE_WEIGHTS)

        def one_client(c: ClientState) -> tuple[WeightSet, ClientState]:
            if cfg.fine_tune and spec.k_personal >= 1:
                c = fine_tune(c, spec, base_in, round_idx)
            return client_round(c, spec, base_in, round_idx)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one_client, clients))
        else:
            results = [one_client(c) for c in clients]

        clients = [c for _, c in results]
        for j in range(cfg.num_clients):
            server.log(client_name(j), SERVER, MSG_BASE_WEIGHTS)
        server.base = aggregate(
            [(base_out, g) for (base_out, _), g in zip(results, server.agg_weights)]
        )
        round_metrics = tuple(
            ClientMetrics(
                c.client_id,
                round_idx,
                evaluate(spec, server.base, c.personal, c.test).accuracy,
                evaluate(spec, server.base, c.personal, c.train).loss,
            )
            for c in clients
        )
        records.append(RoundRecord(round_idx, weights_checksum(server.base), round_metrics))

        if checkpoint_dir is not None and checkpoint_every > 0 and round_idx % checkpoint_every == 0:
            write_checkpoint(Path(checkpoint_dir), f"round{round_idx:04d}", server, clients)

    return FederationResult(RoundHistory(tuple(records)), server, clients)


def write_checkpoint(
    directory: Path, tag: str, server: ServerState, clients: Sequence[ClientState]
) -> None:
    """Server base plus every client's personal set, in the checkpoint format."""
    save_weights(directory / f"{tag}_server_base", server.base, split_index=len(server.base))
    for c in clients:
        save_weights(directory / f"{tag}_client{c.client_id}_personal", c.personal, split_index=0)
