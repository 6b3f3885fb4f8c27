"""Reference grid predictor: a small fully-convolutional encoder/decoder
trained with momentum SGD on per-cell binary cross-entropy.

Every victim, attack, and robust model in this package instantiates one of
the two architectures here:

  * grid predictor: conv3x3(c->16)+BN+ReLU -> conv3x3(16->32)+BN+ReLU
    -> 2x avg-pool -> conv3x3(32->32)+BN+ReLU -> 2x nearest upsample
    -> conv3x3(32->16)+BN+ReLU -> conv1x1(16->1), sigmoid applied at
    prediction time
  * clip classifier: the same trunk up to the pooled conv block, then
    global average pooling and a linear head producing one logit

Training is deterministic: weights are initialized from a seeded numpy
generator, batch order comes from a seeded numpy generator, and all torch
ops run on CPU. Two runs with the same seed produce bitwise-identical
weights on one machine.
"""

from __future__ import annotations

import copy
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.stats import rankdata

from .synthgrid import LayoutSample, LithoClip

ARCH_VERSION = "gridsec-net-1"
BN_MOMENTUM = 0.1


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""


class MetricsError(ValueError):
    """Raised for degenerate metric inputs (e.g. single-class pools)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.momentum < 0:
            raise ValueError(f"invalid train config {self}")


@dataclass
class MetricsReport:
    auc: float
    mean_loss: float
    n_samples: int


@dataclass
class BNState:
    """Frozen running statistics of one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM


class _GridNet(nn.Module):
    def __init__(self, in_channels: int, width: int = 1):
        super().__init__()
        w1, w2 = 16 * width, 32 * width
        self.conv1 = nn.Conv2d(in_channels, w1, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(w1, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv2d(w1, w2, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(w2, momentum=BN_MOMENTUM)
        self.pool = nn.AvgPool2d(2)
        self.conv3 = nn.Conv2d(w2, w2, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(w2, momentum=BN_MOMENTUM)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv4 = nn.Conv2d(w2, w1, 3, padding=1)
        self.bn4 = nn.BatchNorm2d(w1, momentum=BN_MOMENTUM)
        self.head = nn.Conv2d(w1, 1, 1)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = self.pool(x)
        x = F.relu(self.bn3(self.conv3(x)))
        x = self.up(x)
        x = F.relu(self.bn4(self.conv4(x)))
        return self.head(x).squeeze(1)  # logits, (B, d, h)


class _ClipNet(nn.Module):
    def __init__(self, width: int = 1):
        super().__init__()
        w1, w2 = 16 * width, 32 * width
        self.conv1 = nn.Conv2d(1, w1, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(w1, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv2d(w1, w2, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(w2, momentum=BN_MOMENTUM)
        self.pool = nn.AvgPool2d(2)
        self.conv3 = nn.Conv2d(w2, w2, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(w2, momentum=BN_MOMENTUM)
        self.fc = nn.Linear(w2, 1)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = self.pool(x)
        x = F.relu(self.bn3(self.conv3(x)))
        x = x.mean(dim=(2, 3))
        return self.fc(x).squeeze(1)  # logits, (B,)


class GridModel:
    """A network plus the metadata needed to use it uniformly.

    ``kind`` is "grid" (per-cell prediction) or "clip" (one logit per
    sample). ``output`` is "sigmoid" for the reference nets; test
    doubles may use "identity" to expose raw outputs.
    """

    def __init__(self, net: nn.Module, kind: str = "grid", in_channels: int = 4,
                 width: int = 1, output: str = "sigmoid",
                 train_config: TrainConfig | None = None):
        self.net = net
        self.kind = kind
        self.in_channels = in_channels
        self.width = width
        self.output = output
        self.train_config = train_config
        self.train_history: list[float] = []

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def prob(self, x: torch.Tensor) -> torch.Tensor:
        out = self.net(x)
        return torch.sigmoid(out) if self.output == "sigmoid" else out

    def clone(self) -> "GridModel":
        other = copy.deepcopy(self)
        return other

    def param_dtype(self) -> torch.dtype:
        for p in self.net.parameters():
            return p.dtype
        for b in self.net.buffers():
            return b.dtype
        return torch.float32


def build_grid_model(in_channels: int = 4, seed: int = 0, width: int = 1) -> GridModel:
    net = _GridNet(in_channels, width)
    _init_weights(net, seed)
    net.eval()
    return GridModel(net, kind="grid", in_channels=in_channels, width=width)


def build_clip_model(seed: int = 0, width: int = 1) -> GridModel:
    net = _ClipNet(width)
    _init_weights(net, seed)
    net.eval()
    return GridModel(net, kind="clip", in_channels=1, width=width)


def _init_weights(net: nn.Module, seed: int) -> None:
    """He-style init from a seeded numpy generator: deterministic and
    independent of torch's global RNG."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = int(np.prod(m.weight.shape[1:]))
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=m.weight.shape)
                m.weight.copy_(torch.from_numpy(w).to(m.weight.dtype))
                if m.bias is not None:
                    m.bias.zero_()


def _to_torch_features(X: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    """(d,h,c) or (n,d,h,c) channel-last numpy -> (n,c,d,h) torch."""
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))
    return t.permute(0, 3, 1, 2).contiguous().to(dtype)


def _to_torch_patterns(X: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    """(d,h) or (n,d,h) numpy -> (n,1,d,h) torch."""
    arr = np.asarray(X)
    if arr.ndim == 2:
        arr = arr[None]
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))
    return t.unsqueeze(1).to(dtype)


def features_to_input(model: GridModel, X: np.ndarray) -> torch.Tensor:
    """Convert task-layout numpy features into the model's NCHW input."""
    dtype = model.param_dtype()
    if model.kind == "clip":
        return _to_torch_patterns(X, dtype)
    arr = np.asarray(X)
    c = arr.shape[-1]
    if c != model.in_channels:
        raise ValueError(f"expected {model.in_channels} channels, got {c}")
    return _to_torch_features(X, dtype)


def input_to_features(model: GridModel, x: torch.Tensor) -> np.ndarray:
    """Inverse of features_to_input (drops the batch axis for n=1)."""
    if model.kind == "clip":
        arr = x.detach().squeeze(1).cpu().numpy()
    else:
        arr = x.detach().permute(0, 2, 3, 1).cpu().numpy()
    return arr[0] if arr.shape[0] == 1 else arr


def predict(model: GridModel, X: np.ndarray) -> np.ndarray:
    """Probability grid(s) for grid models, probability scalar(s) for clip
    models. Deterministic; BN uses frozen running statistics."""
    single = (np.asarray(X).ndim == 3) if model.kind == "grid" else (np.asarray(X).ndim == 2)
    inp = features_to_input(model, X)
    model.net.eval()
    with torch.no_grad():
        out = model.prob(inp)
    res = out.cpu().numpy()
    return res[0] if single else res


def _bce_logits(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, targets)


def _stack_features(batch: Sequence[LayoutSample], dtype: torch.dtype) -> torch.Tensor:
    return _to_torch_features(np.stack([s.features for s in batch]), dtype)


def _batched_indices(groups: dict, order_rng: np.random.Generator, batch_size: int):
    """Yield per-epoch batches of indices, grouped by grid shape so tensors
    stack, shuffled within each group by the shared data RNG."""
    for shape in sorted(groups):
        idx = np.asarray(groups[shape])
        perm = order_rng.permutation(len(idx))
        shuffled = idx[perm]
        for i in range(0, len(shuffled), batch_size):
            yield shuffled[i : i + batch_size]


def _group_by_shape(samples: Sequence) -> dict:
    groups: dict = {}
    for i, s in enumerate(samples):
        key = s.features.shape if isinstance(s, LayoutSample) else s.pattern.shape
        groups.setdefault(key, []).append(i)
    return groups


def _fit(
    model: GridModel,
    samples: Sequence,
    cfg: TrainConfig,
    target_fn: Callable[[list[int]], torch.Tensor],
    data_rng: np.random.Generator,
    penalty_fn: Callable[[GridModel, torch.Tensor, torch.Tensor], torch.Tensor] | None = None,
) -> GridModel:
    """Shared SGD loop. ``target_fn`` maps batch indices to a target tensor
    (true labels, pseudo labels, ...); ``penalty_fn`` optionally adds a
    regularizer to the per-batch loss. Appends per-epoch mean losses to
    ``model.train_history``."""
    opt = torch.optim.SGD(model.net.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    groups = _group_by_shape(samples)
    dtype = model.param_dtype()
    for _ in range(cfg.epochs):
        model.net.train()
        losses = []
        for batch_idx in _batched_indices(groups, data_rng, cfg.batch_size):
            idx = [int(i) for i in batch_idx]
            if model.kind == "clip":
                X = _to_torch_patterns(np.stack([samples[i].pattern for i in idx]), dtype)
            else:
                X = _stack_features([samples[i] for i in idx], dtype)
            y = target_fn(idx).to(dtype)
            opt.zero_grad()
            loss = _bce_logits(model.net(X), y)
            if penalty_fn is not None:
                loss = loss + penalty_fn(model, X, y)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss during training; try a smaller learning rate than {cfg.lr}"
                )
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
        model.train_history.append(float(np.mean(losses)))
    model.net.eval()
    return model


def train(
    samples: Sequence[LayoutSample],
    cfg: TrainConfig,
    init_model: GridModel | None = None,
    data_rng: np.random.Generator | None = None,
) -> GridModel:
    """Train the reference grid predictor on labeled samples.

    ``init_model`` continues training from existing weights (the model is
    copied, not mutated); ``data_rng`` overrides the batch-order stream,
    which federated training uses to keep client streams independent.
    """
    if not samples:
        raise ValueError("need at least one training sample")
    if any(s.label is None for s in samples):
        raise ValueError("all training samples must carry labels")
    if init_model is not None:
        model = init_model.clone()
    else:
        model = build_grid_model(in_channels=samples[0].features.shape[-1], seed=cfg.seed)
    model.train_config = cfg
    rng = data_rng if data_rng is not None else np.random.default_rng(cfg.seed)
    dtype = model.param_dtype()

    def targets(idx: list[int]) -> torch.Tensor:
        return torch.from_numpy(np.stack([samples[i].label for i in idx]).astype(np.float64)).to(dtype)

    return _fit(model, samples, cfg, targets, rng)


def train_clip_model(
    clips: Sequence[LithoClip],
    cfg: TrainConfig,
    init_model: GridModel | None = None,
    data_rng: np.random.Generator | None = None,
    penalty_fn=None,
) -> GridModel:
    """Train the litho-clip hotspot classifier."""
    if not clips:
        raise ValueError("need at least one training clip")
    model = init_model.clone() if init_model is not None else build_clip_model(seed=cfg.seed)
    model.train_config = cfg
    rng = data_rng if data_rng is not None else np.random.default_rng(cfg.seed)
    dtype = model.param_dtype()

    def targets(idx: list[int]) -> torch.Tensor:
        return torch.tensor([float(clips[i].hotspot) for i in idx], dtype=dtype)

    return _fit(model, clips, cfg, targets, rng, penalty_fn=penalty_fn)


def pooled_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC AUC by the rank statistic (average ranks handle ties), equal to
    pair counting with half credit for tied pairs."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0:
        raise MetricsError("AUC undefined: pooled labels contain only the negative class (0)")
    if neg == 0:
        raise MetricsError("AUC undefined: pooled labels contain only the positive class (1)")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def evaluate_auc(model: GridModel, samples: Sequence[LayoutSample]) -> MetricsReport:
    """Pooled-cell AUC and mean BCE over all cells of all samples."""
    scores, labels, losses = [], [], []
    groups = _group_by_shape(samples)
    for shape in sorted(groups):
        batch = [samples[i] for i in groups[shape]]
        preds = predict(model, np.stack([s.features for s in batch]))
        if preds.ndim == 2:
            preds = preds[None]
        for s, p in zip(batch, preds):
            if s.label is None:
                raise ValueError(f"sample {s.id} has no label")
            scores.append(p.ravel())
            labels.append(s.label.ravel())
            eps = 1e-7
            pc = np.clip(p.ravel().astype(np.float64), eps, 1 - eps)
            yc = s.label.ravel().astype(np.float64)
            losses.append(-(yc * np.log(pc) + (1 - yc) * np.log(1 - pc)))
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    return MetricsReport(
        auc=pooled_auc(scores, labels),
        mean_loss=float(np.concatenate(losses).mean()),
        n_samples=len(samples),
    )


def evaluate_clip_auc(model: GridModel, clips: Sequence[LithoClip]) -> MetricsReport:
    """Clip-level AUC for the hotspot classifier."""
    probs = predict(model, np.stack([c.pattern for c in clips]).astype(np.float32))
    labels = np.array([c.hotspot for c in clips], dtype=np.uint8)
    eps = 1e-7
    pc = np.clip(np.asarray(probs, dtype=np.float64), eps, 1 - eps)
    losses = -(labels * np.log(pc) + (1 - labels) * np.log(1 - pc))
    return MetricsReport(auc=pooled_auc(probs, labels), mean_loss=float(losses.mean()),
                         n_samples=len(clips))


@dataclass
class MatchTarget:
    """Loss ||F(X) - target||_2 over the flattened outputs."""

    target: np.ndarray


@dataclass
class CellLoss:
    """Mean per-cell binary cross-entropy against the given labels."""

    labels: np.ndarray


@dataclass
class ScalarLoss:
    """Arbitrary scalar functional of the model output tensor."""

    fn: Callable[[torch.Tensor], torch.Tensor]


LossSpec = MatchTarget | CellLoss | ScalarLoss


def loss_value(model: GridModel, x: torch.Tensor, spec: LossSpec) -> torch.Tensor:
    """Scalar loss of ``spec`` at input ``x`` (torch graph preserved)."""
    dtype = model.param_dtype()
    if isinstance(spec, MatchTarget):
        target = torch.from_numpy(np.asarray(spec.target, dtype=np.float64)).to(dtype)
        out = model.prob(x)
        return torch.linalg.vector_norm(out - target)
    if isinstance(spec, CellLoss):
        y = torch.from_numpy(np.asarray(spec.labels, dtype=np.float64)).to(dtype)
        if y.dim() == out_dims(model) - 1:
            y = y.unsqueeze(0)
        if model.output == "sigmoid":
            return _bce_logits(model.logits(x), y)
        return F.binary_cross_entropy(model.prob(x).clamp(1e-7, 1 - 1e-7), y)
    if isinstance(spec, ScalarLoss):
        return spec.fn(model.prob(x))
    raise TypeError(f"unknown loss spec {spec!r}")


def out_dims(model: GridModel) -> int:
    return 3 if model.kind == "grid" else 1


def input_gradient(model: GridModel, X: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Exact gradient of the specified scalar loss w.r.t. the input, at
    frozen weights, returned in the task layout of ``X``."""
    model.net.eval()
    x = features_to_input(model, X).clone().requires_grad_(True)
    loss = loss_value(model, x, spec)
    (grad,) = torch.autograd.grad(loss, x)
    out = input_to_features(model, grad)
    return out.reshape(np.asarray(X).shape)


def bn_layers(model: GridModel) -> list[nn.BatchNorm2d]:
    return [m for m in model.net.modules() if isinstance(m, nn.BatchNorm2d)]


def bn_stats(model: GridModel) -> list[BNState]:
    """Running (mean, variance) per BN layer, in layer order."""
    layers = bn_layers(model)
    if not layers:
        raise ValueError("model has no batch-norm layers")
    return [
        BNState(
            mean=l.running_mean.detach().cpu().numpy().copy(),
            var=l.running_var.detach().cpu().numpy().copy(),
            momentum=BN_MOMENTUM,
        )
        for l in layers
    ]


def save_checkpoint(model: GridModel, path: str) -> None:
    """Write a checkpoint: float32 tensor map keyed by layer name, plus the
    architecture/train-config echo needed to rebuild the model exactly."""
    meta = {
        "arch_version": ARCH_VERSION,
        "kind": model.kind,
        "in_channels": model.in_channels,
        "width": model.width,
        "output": model.output,
        "train_config": vars(model.train_config) if model.train_config else None,
        "train_history": model.train_history,
        "bn_momentum": BN_MOMENTUM,
    }
    arrays = {}
    for name, p in model.net.state_dict().items():
        arrays["t:" + name] = p.detach().cpu().numpy()
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path: str) -> GridModel:
    """Rebuild a model from a checkpoint; predictions match the writer's
    bit-exactly on the same machine."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        tensors = {k[2:]: data[k] for k in data.files if k.startswith("t:")}
    if meta["kind"] == "clip":
        model = build_clip_model(width=meta["width"])
    else:
        model = build_grid_model(in_channels=meta["in_channels"], width=meta["width"])
    model.output = meta["output"]
    if meta["train_config"]:
        model.train_config = TrainConfig(**meta["train_config"])
    model.train_history = list(meta.get("train_history", []))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.net.load_state_dict(state)
    model.net.eval()
    return model


def state_arrays(model: GridModel) -> dict[str, np.ndarray]:
    """The model's full state as numpy arrays (weights and BN buffers)."""
    return {k: v.detach().cpu().numpy().copy() for k, v in model.net.state_dict().items()}


def load_state_arrays(model: GridModel, arrays: dict[str, np.ndarray]) -> GridModel:
    model.net.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()})
    return model
