"""Model-competitiveness attack: budgeted querying of a victim model and
pseudo-label training of a substitute.

The attack-side trainer never touches victim weights; every victim access
goes through ``QueryOracle``, which meters queries against an optional
budget and keeps an append-only ledger.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .modelcore import GridModel, TrainConfig, _fit, build_grid_model, evaluate_auc, predict
from .synthgrid import DatasetManifest, LayoutSample, load_samples


class BudgetExceededError(RuntimeError):
    """Raised when a metered victim refuses a query past its budget."""


@dataclass
class QueryLedger:
    budget: int | None = None
    log: list[tuple[str, float]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.log)

    def charge(self, ids: Sequence[str]) -> None:
        if self.budget is not None and self.count + len(ids) > self.budget:
            raise BudgetExceededError(
                f"query budget {self.budget} exhausted ({self.count} used, {len(ids)} requested)"
            )
        now = time.time()
        for sid in ids:
            self.log.append((sid, now))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "timestamp"])
            w.writerows(self.log)


@dataclass(frozen=True)
class ScenarioTag:
    """Deployment scenario: (black-box, trained, separated provider/user)."""

    name: str
    black_box: bool
    trained: bool
    separated: bool


SCENARIOS = {
    "S1": ScenarioTag("S1", True, True, True),
    "S2": ScenarioTag("S2", False, True, True),
    "S3": ScenarioTag("S3", True, False, True),
    "S4": ScenarioTag("S4", False, True, False),
}


def query_victim(victim: GridModel, X: np.ndarray, ledger: QueryLedger,
                 ids: Sequence[str] | None = None) -> np.ndarray:
    """Metered prediction: identical to ``predict`` but charged per sample."""
    arr = np.asarray(X)
    n = 1 if arr.ndim == 3 else arr.shape[0]
    if ids is None:
        ids = [f"anon-{ledger.count + i}" for i in range(n)]
    ledger.charge(list(ids))
    return predict(victim, X)


class QueryOracle:
    """The only interface the attack-side trainer has to the victim."""

    def __init__(self, victim: GridModel, ledger: QueryLedger):
        self._victim = victim
        self.ledger = ledger

    def query(self, X: np.ndarray, ids: Sequence[str] | None = None) -> np.ndarray:
        return query_victim(self._victim, X, self.ledger, ids)


def pseudo_label(preds: np.ndarray, mode: str = "soft") -> np.ndarray:
    """Victim outputs as training targets: 'soft' keeps probabilities,
    'hard' thresholds at 0.5 with ties going to 1."""
    if mode == "soft":
        return np.asarray(preds, dtype=np.float32)
    if mode == "hard":
        return (np.asarray(preds) >= 0.5).astype(np.float32)
    raise ValueError(f"unknown pseudo-label mode {mode!r}")


@dataclass(frozen=True)
class ExtractionConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    pseudo_mode: str = "soft"
    cache_queries: bool = False  # default no-cache: one query per sample per epoch
    width: int = 1
    budget: int | None = None


@dataclass
class ExtractionReport:
    victim_auc: float
    baseline_auc: float
    attack1_auc: float
    attack2_auc: float
    query_count: int
    pseudo_mode: str

    def as_dict(self) -> dict:
        return dict(vars(self))

    def csv_row(self) -> list:
        return [self.victim_auc, self.baseline_auc, self.attack1_auc,
                self.attack2_auc, self.query_count, self.pseudo_mode]


def train_attack_model(
    unlabeled: Sequence[LayoutSample],
    oracle: QueryOracle,
    cfg: ExtractionConfig,
    extra_labeled: Sequence[LayoutSample] | None = None,
) -> GridModel:
    """Train a substitute model on pseudo labels from the oracle, optionally
    mixed with a labeled pool (equal per-sample weight). The trainer sees
    only query outputs, never victim weights. A run with no labeled pool is
    "attack model 1"; with one, "attack model 2"."""
    if not unlabeled:
        raise ValueError("unlabeled pool must be nonempty")
    extra = list(extra_labeled) if extra_labeled else []
    pool: list[LayoutSample] = list(unlabeled) + extra
    n_unlabeled = len(unlabeled)

    model = build_grid_model(in_channels=pool[0].features.shape[-1], seed=cfg.train.seed,
                             width=cfg.width)
    model.train_config = cfg.train
    rng = np.random.default_rng(cfg.train.seed)
    dtype = model.param_dtype()
    cache: dict[int, np.ndarray] = {}

    def targets(idx: list[int]) -> torch.Tensor:
        out = []
        for i in idx:
            if i < n_unlabeled:
                if cfg.cache_queries and i in cache:
                    out.append(cache[i])
                    continue
                pred = oracle.query(pool[i].features, ids=[pool[i].id])
                lab = pseudo_label(pred, cfg.pseudo_mode)
                if cfg.cache_queries:
                    cache[i] = lab
                out.append(lab)
            else:
                out.append(pool[i].label.astype(np.float32))
        return torch.from_numpy(np.stack(out).astype(np.float64)).to(dtype)

    return _fit(model, pool, cfg.train, targets, rng)


def run_extraction_experiment(
    manifest: DatasetManifest,
    dataset_dir: str,
    cfg: ExtractionConfig,
    victim: GridModel | None = None,
) -> tuple[ExtractionReport, QueryLedger]:
    """The four-model protocol: victim on the 40% labeled partition,
    baseline on the attacker's 10% labeled partition, attack model 1 on
    pseudo labels over the 40% unlabeled partition, attack model 2 on
    pseudo plus the attacker's labeled pool; all evaluated on the common
    10% test partition."""
    if manifest.split is None:
        raise ValueError("manifest has no split; run split_dataset first")
    from .modelcore import train  # local import to keep module deps one-way

    split = manifest.split
    victim_train = load_samples(dataset_dir, manifest, split.victim_train)
    test = load_samples(dataset_dir, manifest, split.test)
    unlabeled = load_samples(dataset_dir, manifest, split.attacker_unlabeled)
    labeled = load_samples(dataset_dir, manifest, split.attacker_labeled)

    if victim is None:
        victim = train(victim_train, cfg.train)
    ledger = QueryLedger(budget=cfg.budget)
    oracle = QueryOracle(victim, ledger)

    baseline = train(labeled, cfg.train)
    attack1 = train_attack_model(unlabeled, oracle, cfg)
    attack2 = train_attack_model(unlabeled, oracle, cfg, extra_labeled=labeled)

    report = ExtractionReport(
        victim_auc=evaluate_auc(victim, test).auc,
        baseline_auc=evaluate_auc(baseline, test).auc,
        attack1_auc=evaluate_auc(attack1, test).auc,
        attack2_auc=evaluate_auc(attack2, test).auc,
        query_count=ledger.count,
        pseudo_mode=cfg.pseudo_mode,
    )
    return report, ledger
