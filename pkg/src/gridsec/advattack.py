"""Performance attacks against frozen models: FGSM, PGD, constrained SRAF
insertion on litho clips, and backdoor trigger poisoning.

FGSM/PGD follow the classic l-inf recipe

    X_p <- clip(X + eps * sign(grad_X J(F(X|w), y)))

with PGD iterating projected ascent steps and retaining the best-loss
iterate. With the default step size (eps), PGD's first step from a clean
start lands exactly on the FGSM point, which makes "PGD loss >= FGSM loss"
hold by construction rather than statistically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .modelcore import GridModel, features_to_input
from .synthgrid import LayoutSample, LithoClip


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationBudget:
    epsilon: float
    steps: int = 10
    step_size: float | None = None  # None -> epsilon
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def eta(self) -> float:
        return self.epsilon if self.step_size is None else self.step_size


@dataclass(frozen=True)
class SRAFConfig:
    rect: tuple[int, int] = (2, 2)
    max_insertions: int = 8
    min_spacing: int = 2  # minimum Chebyshev distance to existing foreground

    def __post_init__(self):
        if self.rect[0] < 1 or self.rect[1] < 1 or self.max_insertions < 0:
            raise ValueError("rect dims must be positive, max_insertions nonnegative")
        if self.min_spacing < 1:
            raise ValueError("min_spacing must be >= 1")


@dataclass(frozen=True)
class Trigger:
    """Backdoor stamp: a small binary pattern written into one feature
    channel at a corner, teaching the model to predict the target class."""

    pattern: np.ndarray = field(default_factory=lambda: np.ones((4, 4), dtype=np.float32))
    channel: int = 2
    location: str = "nw"  # nw | ne | sw | se
    target: str = "zero-region"  # zero-region (grids) | non-hotspot (clips)

    def region(self, d: int, h: int) -> tuple[slice, slice]:
        pw, ph = self.pattern.shape
        if pw > d or ph > h:
            raise AttackError(f"trigger {self.pattern.shape} does not fit a {d}x{h} grid")
        x0 = 0 if self.location in ("nw", "ne") else d - pw
        y0 = 0 if self.location in ("nw", "sw") else h - ph
        return slice(x0, x0 + pw), slice(y0, y0 + ph)


@dataclass
class AttackOutcome:
    X_p: np.ndarray
    clean_pred: np.ndarray | float
    attacked_pred: np.ndarray | float
    success: bool
    perturbation_linf: float
    clean_loss: float = float("nan")
    attacked_loss: float = float("nan")
    insertions: int = 0


def _bce_grid(model: GridModel, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    logits = model.logits(x)
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, y)


def _attack_loss_and_grad(model: GridModel, X: np.ndarray, y: np.ndarray):
    dtype = model.param_dtype()
    x = features_to_input(model, X).requires_grad_(True)
    target = torch.from_numpy(np.asarray(y, dtype=np.float64)).to(dtype)
    if target.dim() == (2 if model.kind == "grid" else 0):
        target = target.unsqueeze(0)
    loss = _bce_grid(model, x, target)
    (grad,) = torch.autograd.grad(loss, x)
    return float(loss.item()), grad


def _attack_loss(model: GridModel, X: np.ndarray, y: np.ndarray) -> float:
    loss, _ = _attack_loss_and_grad(model, X, y)
    return loss


def _grad_to_task_layout(model: GridModel, grad: torch.Tensor, like: np.ndarray) -> np.ndarray:
    if model.kind == "grid":
        arr = grad.permute(0, 2, 3, 1).cpu().numpy()
    else:
        arr = grad.squeeze(1).cpu().numpy()
    return arr.reshape(np.asarray(like).shape)


def fgsm(model: GridModel, X: np.ndarray, y: np.ndarray, budget: PerturbationBudget) -> AttackOutcome:
    """One-step gradient-sign attack with the final clip to [0, 1]."""
    from .modelcore import predict

    model.net.eval()
    X = np.asarray(X, dtype=np.float32)
    clean_loss, grad = _attack_loss_and_grad(model, X, y)
    step = budget.epsilon * np.sign(_grad_to_task_layout(model, grad, X)).astype(np.float64)
    X_p = np.clip(X.astype(np.float64) + step, 0.0, 1.0).astype(np.float32)
    clean_pred = predict(model, X)
    attacked_pred = predict(model, X_p)
    attacked_loss = _attack_loss(model, X_p, y)
    return AttackOutcome(
        X_p=X_p,
        clean_pred=clean_pred,
        attacked_pred=attacked_pred,
        success=bool(attacked_loss > clean_loss),
        perturbation_linf=float(np.abs(X_p - X).max()),
        clean_loss=clean_loss,
        attacked_loss=attacked_loss,
    )


def pgd(
    model: GridModel,
    X: np.ndarray,
    y: np.ndarray,
    budget: PerturbationBudget,
    rng: np.random.Generator | None = None,
    init: np.ndarray | None = None,
) -> AttackOutcome:
    """Multi-step projected gradient ascent retaining the best-loss iterate.

    The candidate set includes the starting iterate, so the reported loss
    is >= the initial loss; with ``init`` at the FGSM point the outcome
    dominates FGSM by construction.
    """
    from .modelcore import predict

    model.net.eval()
    X = np.asarray(X, dtype=np.float64)
    eps = budget.epsilon
    if init is not None:
        x_cur = np.asarray(init, dtype=np.float64)
        # allow float32 rounding slack, then project exactly onto the ball
        if np.abs(x_cur - X).max() > eps + 1e-6:
            raise AttackError("init lies outside the epsilon ball")
        x_cur = np.clip(x_cur, X - eps, X + eps)
    elif budget.random_start and eps > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        x_cur = X + rng.uniform(-eps, eps, size=X.shape)
    else:
        x_cur = X.copy()
    x_cur = np.clip(x_cur, 0.0, 1.0)

    best_x = x_cur.copy()
    best_loss = _attack_loss(model, x_cur.astype(np.float32), y)
    for _ in range(budget.steps):
        _, grad = _attack_loss_and_grad(model, x_cur.astype(np.float32), y)
        g = np.sign(_grad_to_task_layout(model, grad, X))
        x_cur = x_cur + budget.eta * g
        x_cur = np.clip(x_cur, X - eps, X + eps)
        x_cur = np.clip(x_cur, 0.0, 1.0)
        loss = _attack_loss(model, x_cur.astype(np.float32), y)
        if loss > best_loss:
            best_loss = loss
            best_x = x_cur.copy()

    X_p = best_x.astype(np.float32)
    X32 = X.astype(np.float32)
    clean_loss = _attack_loss(model, X32, y)
    return AttackOutcome(
        X_p=X_p,
        clean_pred=predict(model, X32),
        attacked_pred=predict(model, X_p),
        success=bool(best_loss > clean_loss),
        perturbation_linf=float(np.abs(X_p.astype(np.float64) - X).max()),
        clean_loss=clean_loss,
        attacked_loss=best_loss,
    )


def legal_sraf_positions(pattern: np.ndarray, cfg: SRAFConfig) -> list[tuple[int, int]]:
    """All (x0, y0) where the SRAF rectangle keeps Chebyshev distance
    >= min_spacing from every current foreground cell."""
    d, h = pattern.shape
    w, hh = cfg.rect
    margin = cfg.min_spacing - 1
    out = []
    for x0 in range(0, d - w + 1):
        for y0 in range(0, h - hh + 1):
            xa, xb = max(0, x0 - margin), min(d, x0 + w + margin)
            ya, yb = max(0, y0 - margin), min(h, y0 + hh + margin)
            if pattern[xa:xb, ya:yb].any():
                continue
            out.append((x0, y0))
    return out


def sraf_spacing_legal(original: np.ndarray, perturbed: np.ndarray, cfg: SRAFConfig) -> bool:
    """Brute-force O(n^2) legality check of a perturbed pattern.

    Legal means: no original foreground cell was removed, and every
    inserted shape (8-connected component of new cells) keeps Chebyshev
    distance >= min_spacing from the original foreground and from every
    other inserted shape. Cells inside one shape are exempt from the rule.
    """
    from scipy.ndimage import label as cc_label

    if ((original == 1) & (perturbed == 0)).any():
        return False
    inserted_mask = (perturbed == 1) & (original == 0)
    comp, _ = cc_label(inserted_mask, structure=np.ones((3, 3), dtype=int))
    inserted = np.argwhere(inserted_mask)
    orig_cells = np.argwhere(original == 1)
    for ix, iy in inserted:
        for fx, fy in orig_cells:
            if max(abs(int(ix) - int(fx)), abs(int(iy) - int(fy))) < cfg.min_spacing:
                return False
    for a in range(len(inserted)):
        for b in range(a + 1, len(inserted)):
            (ax, ay), (bx, by) = inserted[a], inserted[b]
            if comp[ax, ay] == comp[bx, by]:
                continue
            if max(abs(int(ax) - int(bx)), abs(int(ay) - int(by))) < cfg.min_spacing:
                return False
    return True


def insert_sraf(model: GridModel, clip: LithoClip, cfg: SRAFConfig) -> AttackOutcome:
    """Greedy loss-guided SRAF insertion: at each step place the legal
    rectangle that most lowers the hotspot logit; stop once classified
    non-hotspot or the insertion budget is spent. The pattern stays binary
    and spacing-legal, and original foreground is never touched."""
    from .modelcore import predict

    model.net.eval()
    pattern = clip.pattern.astype(np.uint8).copy()
    original = clip.pattern.astype(np.uint8).copy()
    clean_pred = float(predict(model, pattern.astype(np.float32)))
    pred = clean_pred
    insertions = 0
    w, hh = cfg.rect
    while pred >= 0.5 and insertions < cfg.max_insertions:
        positions = legal_sraf_positions(pattern, cfg)
        if not positions:
            break
        candidates = np.repeat(pattern[None].astype(np.float32), len(positions), axis=0)
        for k, (x0, y0) in enumerate(positions):
            candidates[k, x0 : x0 + w, y0 : y0 + hh] = 1.0
        probs = np.atleast_1d(predict(model, candidates))
        k = int(np.argmin(probs))
        x0, y0 = positions[k]
        pattern[x0 : x0 + w, y0 : y0 + hh] = 1
        pred = float(probs[k])
        insertions += 1

    return AttackOutcome(
        X_p=pattern,
        clean_pred=clean_pred,
        attacked_pred=pred,
        success=bool(pred < 0.5),
        perturbation_linf=float(np.abs(pattern.astype(np.int16) - original.astype(np.int16)).max()),
        insertions=insertions,
    )


def stamp_trigger(trigger: Trigger, features: np.ndarray) -> np.ndarray:
    """Return a copy of grid features with the trigger written into its
    channel at the policy location."""
    out = np.array(features, copy=True)
    sx, sy = trigger.region(out.shape[0], out.shape[1])
    out[sx, sy, trigger.channel] = trigger.pattern.astype(out.dtype)
    return out


def stamp_trigger_pattern(trigger: Trigger, pattern: np.ndarray) -> np.ndarray:
    """Clip-task variant: stamp into the single binary channel."""
    out = np.array(pattern, copy=True)
    sx, sy = trigger.region(out.shape[0], out.shape[1])
    out[sx, sy] = trigger.pattern.astype(out.dtype)
    return out


def poison_dataset(
    samples: Sequence[LayoutSample] | Sequence[LithoClip],
    trigger: Trigger,
    rate: float,
    seed: int = 0,
) -> list:
    """Poison a seeded quota of round(rate * n) samples: stamp the trigger
    and force the attacker's target label (zeros inside the stamped region
    for grid samples, non-hotspot for clips). Quota membership comes from a
    seeded permutation, so re-running is deterministic."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    items = list(samples)
    n = len(items)
    quota = int(round(rate * n))
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(n)[:quota].tolist())
    out = []
    for i, s in enumerate(items):
        if i not in chosen:
            out.append(s)
            continue
        if isinstance(s, LithoClip):
            out.append(LithoClip(id=s.id, pattern=stamp_trigger_pattern(trigger, s.pattern),
                                 hotspot=False))
        else:
            feats = stamp_trigger(trigger, s.features)
            label = np.array(s.label, copy=True)
            sx, sy = trigger.region(label.shape[0], label.shape[1])
            label[sx, sy] = 0
            out.append(LayoutSample(id=s.id, design_name=s.design_name, family=s.family,
                                    size_class=s.size_class, features=feats, label=label))
    return out


def attack_success_rate(model, outcomes: Sequence[AttackOutcome]) -> float:
    """Fraction of outcomes flipped to the attacker's target class. The
    outcomes must come from true-positive inputs."""
    if not outcomes:
        raise AttackError("success rate undefined over an empty outcome set")
    return float(np.mean([o.success for o in outcomes]))


def trigger_success_rate(
    model: GridModel,
    trigger: Trigger,
    eval_samples: Sequence[LayoutSample] | Sequence[LithoClip],
) -> float:
    """Test-time trigger efficacy on true positives.

    Grid task: over all trigger-region cells that are truly positive and
    predicted positive on the clean input, the fraction pushed below 0.5
    once the trigger is stamped. Clip task: the same at clip granularity.
    """
    from .modelcore import predict

    flipped = 0
    total = 0
    for s in eval_samples:
        if isinstance(s, LithoClip):
            if not s.hotspot:
                continue
            clean = float(predict(model, s.pattern.astype(np.float32)))
            if clean < 0.5:
                continue
            stamped = float(predict(model, stamp_trigger_pattern(trigger, s.pattern).astype(np.float32)))
            total += 1
            flipped += int(stamped < 0.5)
        else:
            sx, sy = trigger.region(s.features.shape[0], s.features.shape[1])
            clean = predict(model, s.features)
            mask = (s.label[sx, sy] == 1) & (clean[sx, sy] >= 0.5)
            if not mask.any():
                continue
            stamped_pred = predict(model, stamp_trigger(trigger, s.features))
            total += int(mask.sum())
            flipped += int((stamped_pred[sx, sy][mask] < 0.5).sum())
    if total == 0:
        raise AttackError("no true-positive cells under the trigger region in the eval set")
    return flipped / total
