"""Inherent-unreliability toolkit: label-free layout descriptors, PCA
projection for visualizing design/family structure, Mahalanobis
out-of-distribution warnings, and the size-partitioned training experiment.

Descriptors are deliberately label-free so a similarity warning is
available before any ground truth exists for a query layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import label as cc_label

from .modelcore import GridModel, TrainConfig, evaluate_auc, pooled_auc, predict, train
from .synthgrid import SIZE_CLASS_GRID, DatasetManifest, LayoutSample, load_samples

SIZE_CLASSES = ("small", "middle", "large")
VARIANCE_FLOOR = 1e-12


class ReliabilityError(ValueError):
    pass


def summarize(sample: LayoutSample) -> np.ndarray:
    """Label-free descriptor: per-channel (mean, variance, max), macro count,
    macro area fraction, and a size-class one-hot. Length 3c + 2 + 3."""
    f = sample.features.astype(np.float64)
    stats = []
    for ch in range(f.shape[-1]):
        v = f[:, :, ch]
        stats.extend([v.mean(), v.var(), v.max()])
    macro_mask = f[:, :, 0] > 0.5
    _, macro_count = cc_label(macro_mask)
    one_hot = [1.0 if sample.size_class == s else 0.0 for s in SIZE_CLASSES]
    return np.array(stats + [float(macro_count), macro_mask.mean()] + one_hot, dtype=np.float64)


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray  # (k,), descending
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def transform(self, descriptors: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
        return (X - self.mean) @ self.components.T

    def inverse_transform(self, projected: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(projected, dtype=np.float64))
        return Z @ self.components + self.mean


def fit_pca(descriptors: np.ndarray, k: int) -> PCAModel:
    """PCA via SVD of the centered descriptor matrix. Requires n > k >= 1.
    Rank-deficient data keeps the available components and sets a flag.
    Component signs are fixed (largest-magnitude coordinate positive) so
    fits are deterministic."""
    X = np.asarray(descriptors, dtype=np.float64)
    n, dim = X.shape
    if k < 1 or n <= k:
        raise ReliabilityError(f"need n > k >= 1, got n={n}, k={k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2 / (n - 1)
    tol = max(n, dim) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    kept = min(k, rank) if rank > 0 else 1
    comps = vt[:kept].copy()
    for i in range(kept):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PCAModel(
        mean=mean,
        components=comps,
        explained_variance=var[:kept].copy(),
        rank_deficient=rank < k,
    )


def project(
    pca: PCAModel,
    descriptors: np.ndarray,
    meta: Sequence[tuple[str, str, str]] | None = None,
    csv_path: str | None = None,
    svg_path: str | None = None,
) -> np.ndarray:
    """Project descriptors onto the first two components, optionally
    emitting a scatter CSV (x, y, design, family, size_class) and an SVG.
    ``meta`` rows are (design, family, size_class) per descriptor."""
    if pca.k < 2:
        raise ReliabilityError("projection needs at least two components")
    pts = pca.transform(descriptors)[:, :2]
    rows = meta if meta is not None else [("", "", "")] * len(pts)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "y", "design", "family", "size_class"])
            for (x, y), (design, family, size_class) in zip(pts, rows):
                w.writerow([f"{x:.10g}", f"{y:.10g}", design, family, size_class])
    if svg_path is not None:
        write_scatter_svg(svg_path, pts, [r[1] for r in rows])
    return pts


_SVG_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def write_scatter_svg(path: str, points: np.ndarray, groups: Sequence[str]) -> None:
    """Minimal deterministic SVG scatter, colored by group tag."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    size, margin = 480, 30
    palette = {g: _SVG_COLORS[i % len(_SVG_COLORS)] for i, g in enumerate(sorted(set(groups)))}
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for (x, y), g in zip(pts, groups):
        px = margin + (x - lo[0]) / span[0] * (size - 2 * margin)
        py = size - margin - (y - lo[1]) / span[1] * (size - 2 * margin)
        lines.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{palette[g]}" fill-opacity="0.7"/>')
    ly = 14
    for g, color in sorted(palette.items()):
        lines.append(f'<circle cx="12" cy="{ly}" r="4" fill="{color}"/>')
        lines.append(f'<text x="20" y="{ly + 4}" font-size="11" font-family="sans-serif">{g}</text>')
        ly += 16
    lines.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


@dataclass
class SimilarityReport:
    scores: np.ndarray
    warn: np.ndarray
    threshold: float
    variance_floored: bool

    def as_dict(self) -> dict:
        return {
            "scores": [float(s) for s in self.scores],
            "warn": [bool(w) for w in self.warn],
            "threshold": float(self.threshold),
            "variance_floored": self.variance_floored,
        }


def similarity_score(
    pca: PCAModel,
    train_descriptors: np.ndarray,
    query: np.ndarray,
) -> SimilarityReport:
    """Mahalanobis distance of queries in PCA space, using the training
    projections' per-component variances (floored at 1e-12 with a flag).
    Warn fires above the 99th-percentile training score, so by construction
    at most 1% of training points themselves warn."""
    train_proj = pca.transform(train_descriptors)
    center = train_proj.mean(axis=0)
    var = train_proj.var(axis=0, ddof=1)
    floored = bool((var < VARIANCE_FLOOR).any())
    var = np.maximum(var, VARIANCE_FLOOR)

    def scores_of(proj: np.ndarray) -> np.ndarray:
        return np.sqrt((((proj - center) ** 2) / var).sum(axis=1))

    train_scores = scores_of(train_proj)
    threshold = float(np.percentile(train_scores, 99, method="higher"))
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    qs = scores_of(pca.transform(q))
    return SimilarityReport(scores=qs, warn=qs > threshold, threshold=threshold,
                            variance_floored=floored)


@dataclass
class SizeTable:
    """Table-IV-shaped result: rows are test size classes, columns are the
    training pools {Middle}, {Small+Middle}, {All}."""

    values: np.ndarray  # (3, 3) AUC in [0, 1]
    row_labels: tuple[str, ...] = SIZE_CLASSES
    col_labels: tuple[str, ...] = ("middle", "small+middle", "all")

    def row_argmax(self) -> list[str]:
        return [self.col_labels[int(np.argmax(self.values[i]))] for i in range(len(self.row_labels))]

    def all_trained_dominates(self) -> bool:
        return all(c == "all" for c in self.row_argmax())

    def as_dict(self) -> dict:
        return {
            "rows": list(self.row_labels),
            "cols": list(self.col_labels),
            "values": [[float(v) for v in row] for row in self.values],
            "row_argmax": self.row_argmax(),
        }

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["test_on"] + list(self.col_labels))
            for name, row in zip(self.row_labels, self.values):
                w.writerow([name] + [f"{v:.6f}" for v in row])


def partitioned_training_experiment(
    manifest: DatasetManifest,
    dataset_dir: str,
    cfg: TrainConfig,
) -> SizeTable:
    """Train on {Middle}, {Small+Middle}, {All} pools from the victim-train
    partition and evaluate each on the per-size test partitions."""
    if manifest.split is None:
        raise ReliabilityError("manifest has no split")
    train_samples = load_samples(dataset_dir, manifest, manifest.split.victim_train)
    test_samples = load_samples(dataset_dir, manifest, manifest.split.test)

    by_size_train = {s: [x for x in train_samples if x.size_class == s] for s in SIZE_CLASSES}
    by_size_test = {s: [x for x in test_samples if x.size_class == s] for s in SIZE_CLASSES}
    for s in SIZE_CLASSES:
        if not by_size_train[s]:
            raise ReliabilityError(f"no {s} designs in the training partition")
        if not by_size_test[s]:
            raise ReliabilityError(f"no {s} designs in the test partition")

    pools = {
        "middle": by_size_train["middle"],
        "small+middle": by_size_train["small"] + by_size_train["middle"],
        "all": by_size_train["small"] + by_size_train["middle"] + by_size_train["large"],
    }
    values = np.zeros((3, 3))
    for j, (name, pool) in enumerate(pools.items()):
        model = train(pool, cfg)
        for i, s in enumerate(SIZE_CLASSES):
            values[i, j] = evaluate_auc(model, by_size_test[s]).auc
    return SizeTable(values=values)


@dataclass
class DegradationReport:
    per_design: dict[str, float]
    min_auc: float
    mean_auc: float
    max_auc: float

    def as_dict(self) -> dict:
        return {
            "per_design": {k: float(v) for k, v in sorted(self.per_design.items())},
            "min": self.min_auc,
            "mean": self.mean_auc,
            "max": self.max_auc,
        }


def degradation_audit(model: GridModel, samples: Sequence[LayoutSample]) -> DegradationReport:
    """Per-design pooled AUC table with min/mean/max, exposing the worst
    testing designs a single average would hide."""
    by_design: dict[str, list[LayoutSample]] = {}
    for s in samples:
        by_design.setdefault(s.design_name, []).append(s)
    if len(by_design) < 5:
        raise ReliabilityError(f"need >= 5 designs for a degradation audit, got {len(by_design)}")
    per_design = {}
    for design, group in sorted(by_design.items()):
        scores = np.concatenate([predict(model, s.features).ravel() for s in group])
        labels = np.concatenate([s.label.ravel() for s in group])
        per_design[design] = pooled_auc(scores, labels)
    vals = np.array(list(per_design.values()))
    return DegradationReport(
        per_design=per_design,
        min_auc=float(vals.min()),
        mean_auc=float(vals.mean()),
        max_auc=float(vals.max()),
    )
