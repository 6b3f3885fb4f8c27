"""Minimal synchronous federated-training simulation with optional
poisoning participants.

Each round the server broadcasts the global weights, every client trains
locally (poisoners first stamp their trigger into a fraction of their
local data), and the server aggregates by sample-count-weighted averaging.
Every client holds the full global weights each round; the per-round
report records that exposure explicitly.

Client batch-order RNG streams persist across rounds, so a K=1 federation
with plain SGD (momentum 0, fresh optimizer state per round either way)
is bitwise identical to centralized training for rounds*local_epochs
epochs with the same seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .advattack import Trigger, poison_dataset, trigger_success_rate
from .modelcore import (
    GridModel,
    TrainConfig,
    build_grid_model,
    evaluate_auc,
    load_state_arrays,
    state_arrays,
    train,
)
from .synthgrid import LayoutSample


class FederationError(ValueError):
    pass


@dataclass(frozen=True)
class ClientRole:
    kind: str = "honest"  # honest | poisoner
    trigger: Trigger | None = None
    poison_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("honest", "poisoner"):
            raise ValueError(f"unknown role {self.kind!r}")
        if self.kind == "poisoner" and self.trigger is None:
            raise ValueError("poisoner role needs a trigger")


@dataclass(frozen=True)
class FederationConfig:
    clients: int
    rounds: int
    local_epochs: int
    train: TrainConfig = field(default_factory=lambda: TrainConfig(momentum=0.0))
    roles: tuple[ClientRole, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1 or self.rounds < 1 or self.local_epochs < 0:
            raise ValueError(f"invalid federation config {self}")
        if self.roles and len(self.roles) != self.clients:
            raise ValueError("roles must match client count when given")

    def role(self, i: int) -> ClientRole:
        return self.roles[i] if self.roles else ClientRole()


def local_update(
    global_model: GridModel,
    client_data: Sequence[LayoutSample],
    epochs: int,
    cfg: FederationConfig,
    data_rng: np.random.Generator,
    role: ClientRole | None = None,
    poison_seed: int = 0,
) -> tuple[dict[str, np.ndarray], float]:
    """Train from the broadcast weights on the client's local data and
    return (weights, last local loss). Poisoner clients poison their data
    before training; 0 epochs returns the broadcast weights unchanged."""
    if not client_data:
        raise FederationError("client has no local data")
    data = list(client_data)
    role = role if role is not None else ClientRole()
    if role.kind == "poisoner":
        data = poison_dataset(data, role.trigger, role.poison_rate, seed=poison_seed)
    if epochs == 0:
        return state_arrays(global_model), float("nan")
    local_cfg = TrainConfig(
        epochs=epochs,
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        momentum=cfg.train.momentum,
        seed=cfg.train.seed,
    )
    model = train(data, local_cfg, init_model=global_model, data_rng=data_rng)
    return state_arrays(model), model.train_history[-1]


def aggregate(
    weight_sets: Sequence[dict[str, np.ndarray]],
    sample_counts: Sequence[int],
) -> dict[str, np.ndarray]:
    """Sample-count-weighted elementwise average of client weights.

    A single client passes through unchanged. Float tensors are averaged
    with fractions count_i/total; integer tensors (BN batch counters) take
    the elementwise maximum since averaging them is meaningless.
    """
    if len(weight_sets) != len(sample_counts) or not weight_sets:
        raise FederationError("weight sets and sample counts must align and be nonempty")
    keys = list(weight_sets[0])
    for ws in weight_sets[1:]:
        if list(ws) != keys:
            raise FederationError("weight sets disagree on tensor names")
        for k in keys:
            if ws[k].shape != weight_sets[0][k].shape:
                raise FederationError(f"shape mismatch for tensor {k!r}")
    if len(weight_sets) == 1:
        return {k: np.array(v, copy=True) for k, v in weight_sets[0].items()}
    total = float(sum(sample_counts))
    fractions = [c / total for c in sample_counts]
    out: dict[str, np.ndarray] = {}
    for k in keys:
        if np.issubdtype(weight_sets[0][k].dtype, np.integer):
            out[k] = np.maximum.reduce([ws[k] for ws in weight_sets])
        else:
            acc = np.zeros_like(weight_sets[0][k])
            for f, ws in zip(fractions, weight_sets):
                acc = acc + f * ws[k]
            out[k] = acc
    return out


@dataclass
class RoundRecord:
    round: int
    client_losses: list[float]
    test_auc: float
    trigger_rate: float | None
    all_clients_hold_global_weights: bool = True


@dataclass
class FederationReport:
    rounds: list[RoundRecord]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["round", "client", "local_loss", "global_test_auc", "trigger_rate"])
            for r in self.rounds:
                for ci, loss in enumerate(r.client_losses):
                    w.writerow([r.round, ci, f"{loss:.6f}", f"{r.test_auc:.6f}",
                                "" if r.trigger_rate is None else f"{r.trigger_rate:.6f}"])

    def as_dict(self) -> dict:
        return {
            "rounds": [
                {
                    "round": r.round,
                    "client_losses": [float(x) for x in r.client_losses],
                    "test_auc": r.test_auc,
                    "trigger_rate": r.trigger_rate,
                    "all_clients_hold_global_weights": r.all_clients_hold_global_weights,
                }
                for r in self.rounds
            ]
        }


def run_federation(
    cfg: FederationConfig,
    client_data: Sequence[Sequence[LayoutSample]],
    test_samples: Sequence[LayoutSample],
) -> tuple[GridModel, FederationReport]:
    """Synchronous rounds of broadcast, local update, and aggregation.

    Client data assignments must be disjoint. When any client is a
    poisoner, each round also reports the trigger success rate of the
    aggregated model against that trigger.
    """
    if len(client_data) != cfg.clients:
        raise FederationError(f"expected {cfg.clients} client datasets, got {len(client_data)}")
    seen: set[str] = set()
    for group in client_data:
        ids = {s.id for s in group}
        if ids & seen:
            raise FederationError("client data assignments overlap")
        seen |= ids

    channels = client_data[0][0].features.shape[-1]
    global_model = build_grid_model(in_channels=channels, seed=cfg.train.seed)
    client_rngs = [
        np.random.default_rng(np.random.SeedSequence((cfg.seed, i))) for i in range(cfg.clients)
    ]
    trigger = next((cfg.role(i).trigger for i in range(cfg.clients)
                    if cfg.role(i).kind == "poisoner"), None)

    records: list[RoundRecord] = []
    for rnd in range(cfg.rounds):
        updates, losses = [], []
        for i in range(cfg.clients):
            weights, loss = local_update(
                global_model, client_data[i], cfg.local_epochs, cfg,
                data_rng=client_rngs[i], role=cfg.role(i),
                poison_seed=int(np.random.SeedSequence((cfg.seed, i, rnd)).generate_state(1)[0]),
            )
            updates.append(weights)
            losses.append(loss)
        merged = aggregate(updates, [len(client_data[i]) for i in range(cfg.clients)])
        load_state_arrays(global_model, merged)
        global_model.net.eval()
        auc = evaluate_auc(global_model, test_samples).auc
        rate = None
        if trigger is not None:
            rate = trigger_success_rate(global_model, trigger, test_samples)
        records.append(RoundRecord(round=rnd, client_losses=losses, test_auc=auc, trigger_rate=rate))
    return global_model, FederationReport(rounds=records)
