"""Defenses against performance attacks: curvature-regularized training
(penalizing the change of input gradients along the gradient-sign
direction) and augmentation-based dilution of backdoor triggers.

The curvature penalty is

    R = || grad_X L(X + h*z) - grad_X L(X) ||^2,   z = sign(grad_X L(X)) / ||.||_2

with z held constant (no gradient flows through it) while R itself is
differentiated w.r.t. the parameters via double backprop. Penalty forwards
run with frozen BN statistics, matching what attackers see at test time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .modelcore import (
    GridModel,
    TrainConfig,
    evaluate_clip_auc,
    features_to_input,
    train_clip_model,
)
from .synthgrid import LayoutSample, LithoClip, OracleParams, oracle_label


class DefenseError(ValueError):
    pass


@dataclass(frozen=True)
class CureConfig:
    alpha: float = 0.0
    h: float = 1e-2

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.h <= 0:
            raise ValueError("h must be positive")


@dataclass
class DefenseReport:
    vanilla_auc: float
    vanilla_attack_success: float
    robust_auc: float
    robust_attack_success: float
    cure: CureConfig = field(default_factory=CureConfig)

    def as_dict(self) -> dict:
        return {
            "vanilla": {"auc": self.vanilla_auc, "attack_success": self.vanilla_attack_success},
            "robust": {"auc": self.robust_auc, "attack_success": self.robust_attack_success},
            "cure": {"alpha": self.cure.alpha, "h": self.cure.h},
        }


def _default_loss(model: GridModel, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.binary_cross_entropy_with_logits(model.logits(x), y)


def _cure_terms(model: GridModel, x: torch.Tensor, y: torch.Tensor,
                cfg: CureConfig, loss_fn, create_graph: bool):
    """Returns (R, degenerate): mean over the batch of the squared gradient
    difference along the per-sample unit direction z."""
    x0 = x.detach().requires_grad_(True)
    g0 = torch.autograd.grad(loss_fn(model, x0, y), x0, create_graph=create_graph)[0]
    z = torch.sign(g0).detach()
    norms = z.flatten(1).norm(dim=1)
    degenerate = bool((norms == 0).all().item())
    if degenerate:
        return x.new_zeros(()), True
    shape = (-1,) + (1,) * (z.dim() - 1)
    z = z / norms.clamp_min(1e-12).view(shape)
    x1 = (x.detach() + cfg.h * z).requires_grad_(True)
    g1 = torch.autograd.grad(loss_fn(model, x1, y), x1, create_graph=create_graph)[0]
    r = (g1 - g0).flatten(1).pow(2).sum(dim=1).mean()
    return r, False


def cure_penalty(
    model: GridModel,
    X: np.ndarray,
    y: np.ndarray | float,
    cfg: CureConfig,
    loss_fn: Callable | None = None,
) -> tuple[float, bool]:
    """Curvature penalty at one input (or batch). Returns (R, degenerate);
    a zero clean gradient leaves z undefined, reported as R = 0 with the
    degeneracy flag set. ``loss_fn(model, x, y)`` overrides the default
    per-cell BCE (used by tests with closed-form losses)."""
    model.net.eval()
    x = features_to_input(model, X)
    dtype = model.param_dtype()
    target = torch.as_tensor(np.asarray(y, dtype=np.float64)).to(dtype)
    if target.dim() == (2 if model.kind == "grid" else 0):
        target = target.unsqueeze(0)
    fn = loss_fn if loss_fn is not None else _default_loss
    r, degenerate = _cure_terms(model, x, target, cfg, fn, create_graph=False)
    return float(r.item()), degenerate


def robust_train(
    clips: Sequence[LithoClip],
    train_cfg: TrainConfig,
    cure_cfg: CureConfig,
) -> GridModel:
    """Train the clip classifier with loss L + alpha * R. With alpha = 0 the
    penalty path is skipped entirely, so the run is bitwise identical to
    plain training under the same seed."""
    if cure_cfg.alpha == 0:
        return train_clip_model(clips, train_cfg)

    def penalty(model: GridModel, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        was_training = model.net.training
        model.net.eval()  # frozen BN for both penalty forwards
        try:
            r, degenerate = _cure_terms(model, x, y, cure_cfg, _default_loss, create_graph=True)
        finally:
            if was_training:
                model.net.train()
        if not degenerate and not torch.isfinite(r):
            raise DefenseError(f"non-finite curvature penalty with config {cure_cfg}")
        return cure_cfg.alpha * r

    return train_clip_model(clips, train_cfg, penalty_fn=penalty)


TRANSFORM_NAMES = ("hflip", "vflip", "rot90", "rot180", "rot270")

# Transforms under which the default labeling oracle commutes exactly with
# the grid transform (the mean filter window is symmetric). Toroidal
# translations wrap density across borders and are excluded.
ORACLE_EXACT = frozenset(TRANSFORM_NAMES)


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = False
    vflip: bool = False
    rotations: bool = False  # 90/180/270 degrees; square grids only
    translations: tuple[tuple[int, int], ...] = ()
    max_translation: int = 4

    def transform_names(self) -> list[str]:
        names = []
        if self.hflip:
            names.append("hflip")
        if self.vflip:
            names.append("vflip")
        if self.rotations:
            names.extend(["rot90", "rot180", "rot270"])
        for dx, dy in self.translations:
            if abs(dx) > self.max_translation or abs(dy) > self.max_translation:
                raise DefenseError(f"translation ({dx},{dy}) exceeds max {self.max_translation}")
            names.append(f"shift:{dx}:{dy}")
        return names


def _apply_transform(grid: np.ndarray, name: str) -> np.ndarray:
    """Apply a named transform to the leading two axes."""
    if name == "hflip":
        return grid[::-1, ...].copy()
    if name == "vflip":
        return grid[:, ::-1, ...].copy()
    if name.startswith("rot"):
        k = {"rot90": 1, "rot180": 2, "rot270": 3}[name]
        return np.rot90(grid, k=k, axes=(0, 1)).copy()
    if name.startswith("shift:"):
        _, dx, dy = name.split(":")
        return np.roll(grid, (int(dx), int(dy)), axis=(0, 1))
    raise DefenseError(f"unknown transform {name!r}")


def dilute_augment(
    samples: Sequence[LayoutSample],
    aug_cfg: AugmentConfig,
    oracle_params: OracleParams | None = None,
) -> list[LayoutSample]:
    """Expand the training set by applying each enabled transform jointly to
    features and labels. Output size = input size x (1 + #transforms).

    When ``oracle_params`` is given, transformed labels of oracle-exact
    transforms are re-checked against the oracle; a mismatch raises.
    Rotations on non-square grids raise before any work is done.
    """
    names = aug_cfg.transform_names()
    if any(n.startswith("rot") for n in names):
        for s in samples:
            if s.features.shape[0] != s.features.shape[1]:
                raise DefenseError(
                    f"rotations need a square grid; sample {s.id} is {s.features.shape[:2]}"
                )
    out: list[LayoutSample] = []
    for s in samples:
        out.append(s)
        for name in names:
            feats = _apply_transform(s.features, name)
            label = _apply_transform(s.label, name) if s.label is not None else None
            if oracle_params is not None and label is not None and name in ORACLE_EXACT:
                redo = oracle_label(feats, oracle_params)
                if not np.array_equal(redo, label):
                    raise DefenseError(
                        f"oracle re-check failed for transform {name} of sample {s.id}"
                    )
            out.append(
                LayoutSample(id=f"{s.id}+{name}", design_name=s.design_name, family=s.family,
                             size_class=s.size_class, features=feats, label=label)
            )
    return out


def evaluate_defense(
    vanilla: GridModel,
    robust: GridModel,
    attack_fn: Callable[[GridModel, LithoClip], "AttackOutcome"],
    eval_clips: Sequence[LithoClip],
) -> DefenseReport:
    """Fill the four-cell report: clean AUC and attack success for the
    vanilla and the robust model on the same eval set. Attack success is
    measured over true-positive clips (hotspot clips the model catches)."""
    from .advattack import attack_success_rate
    from .modelcore import predict

    def run(model: GridModel) -> tuple[float, float]:
        auc = evaluate_clip_auc(model, eval_clips).auc
        outcomes = []
        for clip in eval_clips:
            if not clip.hotspot:
                continue
            if float(predict(model, clip.pattern.astype(np.float32))) < 0.5:
                continue
            outcomes.append(attack_fn(model, clip))
        if not outcomes:
            raise DefenseError("no true-positive clips to attack in the eval set")
        return auc, attack_success_rate(model, outcomes)

    v_auc, v_succ = run(vanilla)
    r_auc, r_succ = run(robust)
    return DefenseReport(
        vanilla_auc=v_auc,
        vanilla_attack_success=v_succ,
        robust_auc=r_auc,
        robust_attack_success=r_succ,
    )
