"""Federated orchestration: client sampling, local training, averaging.

Each cluster runs an independent federation.  Non-selected clients neither
train nor receive that round's global model, which is what later stratifies
households into the received-all-updates vs missed-updates types.
"""

from __future__ import annotations

import json
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np

from .errors import DomainError
from .nn import (
    DEFAULT_BATCH,
    DEFAULT_LR,
    LayerSpec,
    ModelParams,
    init_params,
    mean_loss,
    save_model,
    train_local,
)


@dataclass
class FederationConfig:
    rounds: int = 20
    clients_per_round: int | float = 0.105  # int count or fraction of the cluster
    local_epochs: int = 1
    batch_size: int = DEFAULT_BATCH
    client_lr: float = DEFAULT_LR
    server_lr: float = 1.0
    seed: int = 0
    convergence_epsilon: float = 1e-4  # <= 0 disables early stopping
    convergence_patience: int = 3

    def __post_init__(self):
        if self.rounds < 1:
            raise DomainError("rounds must be >= 1")
        if self.server_lr < 0:
            raise DomainError("server_lr must be >= 0")


@dataclass
class ClientState:
    household_id: str
    inputs: np.ndarray
    targets: np.ndarray
    params: ModelParams | None = None
    rounds_participated: set[int] = field(default_factory=set)
    last_local_loss: float | None = None

    @property
    def n_samples(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class RoundReport:
    round_index: int
    participants: list[str]
    local_losses: dict[str, float]
    global_loss: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round_index,
                "participants": self.participants,
                "local_losses": self.local_losses,
                "global_loss": self.global_loss,
                "wall_time": self.wall_time,
            },
            sort_keys=True,
        )


@dataclass
class GlobalModel:
    params: ModelParams
    round: int


class TransferAudit:
    """Records every value crossing the client/server boundary.

    Only parameter vectors and scalar losses should ever appear here; tests
    assert that no raw consumption windows leak through.
    """

    @dataclass
    class Record:
        round_index: int
        sender: str
        receiver: str
        kind: str  # "params" or "loss"
        size: int

    def __init__(self):
        self.records: list[TransferAudit.Record] = []

    def log_params(self, round_index: int, sender: str, receiver: str, params: ModelParams):
        self.records.append(
            self.Record(round_index, sender, receiver, "params", params.values.shape[0])
        )

    def log_loss(self, round_index: int, sender: str, receiver: str, loss: float):
        if not isinstance(loss, float):
            raise DomainError("only scalar losses may cross the client boundary")
        self.records.append(self.Record(round_index, sender, receiver, "loss", 1))


def mix_seed(*parts) -> int:
    """Stable 32-bit seed from heterogeneous parts (crc over their reprs)."""
    h = 0
    for p in parts:
        h = zlib.crc32(repr(p).encode(), h)
    return h


def local_seed(seed: int, round_index: int, household_id: str) -> int:
    """Per-client per-round training seed."""
    return mix_seed(seed, round_index, household_id)


def resolve_participation(cluster_size: int, clients_per_round: int | float) -> int:
    """Floats are fractions (floored to a count, minimum 1); ints are counts."""
    if isinstance(clients_per_round, float):
        if not 0 < clients_per_round <= 1:
            raise DomainError(f"participation fraction {clients_per_round} not in (0, 1]")
        return max(1, math.floor(clients_per_round * cluster_size))
    count = int(clients_per_round)
    if not 0 < count <= cluster_size:
        raise DomainError(f"clients_per_round {count} not in 1..{cluster_size}")
    return count


def sample_clients(
    member_ids: Sequence[str], clients_per_round: int | float, round_index: int, seed: int
) -> list[str]:
    """Uniform sample without replacement, deterministic from (seed, round)."""
    members = sorted(member_ids)
    count = resolve_participation(len(members), clients_per_round)
    rng = np.random.default_rng([seed, round_index])
    picked = rng.choice(len(members), size=count, replace=False)
    return sorted(members[i] for i in picked)


def federated_average(
    local_params: Sequence[ModelParams], weights: Sequence[float] | None = None
) -> ModelParams:
    """Coordinate-wise mean of client models; optionally sample-count weighted."""
    if not local_params:
        raise DomainError("cannot average zero models")
    spec = local_params[0].spec
    if any(p.spec != spec for p in local_params):
        raise DomainError("cannot average models with mismatched layer specs")
    stacked = np.stack([p.values for p in local_params])
    if weights is None:
        avg = stacked.mean(axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape[0] != stacked.shape[0] or np.any(w <= 0):
            raise DomainError("weights must be positive, one per model")
        avg = (stacked * w[:, None]).sum(axis=0) / w.sum()
    return ModelParams(values=avg, spec=spec)


def server_update(
    global_model: GlobalModel, aggregate: ModelParams, server_lr: float
) -> GlobalModel:
    """W <- W + server_lr * (aggregate - W)."""
    if aggregate.spec != global_model.params.spec:
        raise DomainError("aggregate spec does not match the global model")
    if server_lr == 1.0:
        # exact adoption of the average, bit-identical to the aggregate
        new = aggregate.copy()
    else:
        w = global_model.params.values
        new = ModelParams(values=w + server_lr * (aggregate.values - w), spec=aggregate.spec)
    return GlobalModel(params=new, round=global_model.round + 1)


def make_clients(
    data: Sequence[tuple[str, np.ndarray, np.ndarray]]
) -> list[ClientState]:
    return [ClientState(household_id=hid, inputs=X, targets=y) for hid, X, y in data]


def global_train_loss(clients: Sequence[ClientState], params: ModelParams) -> float:
    """Mean over clients of their mean local loss (equal client weighting)."""
    losses = [mean_loss(params, c.inputs, c.targets) for c in clients]
    return float(np.mean(losses))


def run_federation(
    clients: Sequence[ClientState],
    spec: LayerSpec,
    config: FederationConfig,
    audit: TransferAudit | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[GlobalModel, list[RoundReport], list[ClientState]]:
    """Run the per-cluster federated loop.

    Each round: sample clients, broadcast the global model to the selected
    clients only, train locally, average in household-id order, and apply the
    server step.  Early-stops when global train loss improves by less than
    convergence_epsilon for convergence_patience consecutive rounds.
    """
    if not clients:
        raise DomainError("cannot federate an empty cluster")
    if any(c.n_samples < 1 for c in clients):
        raise DomainError("every client needs at least one training window")
    clients = sorted(clients, key=lambda c: c.household_id)
    ids = [c.household_id for c in clients]
    by_id = {c.household_id: c for c in clients}

    global_model = GlobalModel(params=init_params(spec, config.seed), round=0)
    for c in clients:
        c.params = global_model.params.copy()

    reports: list[RoundReport] = []
    prev_loss: float | None = None
    stall = 0
    for r in range(config.rounds):
        t0 = time.perf_counter()
        selected = sample_clients(ids, config.clients_per_round, r, config.seed)
        local_losses: dict[str, float] = {}
        for hid in selected:
            client = by_id[hid]
            if audit is not None:
                audit.log_params(r, "server", hid, global_model.params)
            trained, loss = train_local(
                global_model.params,
                client.inputs,
                client.targets,
                epochs=config.local_epochs,
                batch_size=config.batch_size,
                lr=config.client_lr,
                seed=local_seed(config.seed, r, hid),
            )
            client.params = trained
            client.rounds_participated.add(r)
            client.last_local_loss = loss
            local_losses[hid] = loss
            if audit is not None:
                audit.log_params(r, hid, "server", trained)
                audit.log_loss(r, hid, "server", float(loss))
        aggregate = federated_average([by_id[hid].params for hid in selected])
        global_model = server_update(global_model, aggregate, config.server_lr)
        loss = global_train_loss(clients, global_model.params)
        reports.append(
            RoundReport(
                round_index=r,
                participants=selected,
                local_losses=local_losses,
                global_loss=loss,
                wall_time=time.perf_counter() - t0,
            )
        )
        if checkpoint_dir is not None:
            save_model(
                global_model.params,
                Path(checkpoint_dir) / f"round_{r}.model",
                meta={"round": r, "seed": config.seed},
            )
        if config.convergence_epsilon > 0:
            if prev_loss is not None and prev_loss - loss < config.convergence_epsilon:
                stall += 1
                if stall >= config.convergence_patience:
                    break
            else:
                stall = 0
            prev_loss = loss
    return global_model, reports, list(clients)


def run_centralized(
    clients: Sequence[ClientState],
    spec: LayerSpec,
    config: FederationConfig,
    epochs: int | None = None,
    pool_id: str = "pooled",
) -> tuple[GlobalModel, list[float]]:
    """Baseline: pool all clients' windows and train one model centrally.

    Trains for `epochs` (default config.rounds) epochs with the federation's
    batch size and client learning rate; per-epoch mean loss is recorded.
    """
    if not clients:
        raise DomainError("cannot train on an empty cluster")
    clients = sorted(clients, key=lambda c: c.household_id)
    X = np.concatenate([c.inputs for c in clients])
    y = np.concatenate([c.targets for c in clients])
    epochs = config.rounds if epochs is None else epochs
    model = GlobalModel(params=init_params(spec, config.seed), round=0)
    losses: list[float] = []
    for e in range(epochs):
        trained, loss = train_local(
            model.params,
            X,
            y,
            epochs=1,
            batch_size=config.batch_size,
            lr=config.client_lr,
            seed=local_seed(config.seed, e, pool_id),
        )
        model = GlobalModel(params=trained, round=e + 1)
        losses.append(loss)
    return model, losses


def write_round_log(reports: Sequence[RoundReport], stream: IO[str]) -> None:
    for report in reports:
        stream.write(report.to_json() + "\n")
