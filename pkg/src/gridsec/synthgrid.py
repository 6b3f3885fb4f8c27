"""Deterministic synthetic layout-grid benchmark generator.

Produces routability-style grid samples (4 feature channels + a binary
congestion label from a rule-based oracle) and litho-style binary clips
with a pairwise-spacing hotspot rule. Everything is a pure function of
its seed: rebuilding a dataset from the same config yields byte-identical
files.

Feature channels (all values in [0, 1]):
    0  macro occupancy   - non-overlapping axis-aligned rectangles
    1  net bbox density  - sum over nets of (bbox indicator / bbox area)
    2  cell/pin density  - sum of isotropic Gaussian bumps at seeded sites
    3  clock-tree map    - rasterized spanning tree over flip-flop sites
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

GENERATOR_VERSION = "gridsec-synthgrid-1"

SIZE_CLASS_GRID = {"small": 32, "middle": 48, "large": 64}

# Fixed oracle score weights for (net density, pin density).
W_NET = 0.7
W_DENSITY = 0.3

# Fixed caps/scales for the density channels.
NET_CAP = 4.0
DENSITY_CAP = 4.0
DENSITY_SIGMA = 2.0

CHANNELS = 4

SPLIT_RATIOS = {
    "victim_train": 0.40,
    "test": 0.10,
    "attacker_unlabeled": 0.40,
    "attacker_labeled": 0.10,
}
SPLIT_TOLERANCE = 0.02


class GenerationError(RuntimeError):
    """Raised when rejection sampling cannot place the requested shapes."""


class CalibrationError(RuntimeError):
    """Raised when oracle threshold calibration does not converge."""


class SplitError(ValueError):
    """Raised when the dataset cannot be partitioned within tolerance."""


@dataclass(frozen=True)
class GridShape:
    """Grid dimensions: width d, height h, channel count c."""

    d: int
    h: int
    c: int

    def __post_init__(self):
        if self.d < 8 or self.h < 8 or self.c < 2:
            raise ValueError(f"grid shape too small: {self}")
        if self.d != int(self.d) or self.h != int(self.h) or self.c != int(self.c):
            raise ValueError(f"grid shape must be integral: {self}")


@dataclass(frozen=True)
class DesignSpec:
    """Generator parameters for one layout of one design.

    ``size_class`` fixes the grid side via ``SIZE_CLASS_GRID``
    (small=32, middle=48, large=64). ``tau`` and ``smoothing_k``
    parameterize the labeling oracle.
    """

    seed: int
    num_macros: int
    macro_size_range: tuple[int, int]
    num_nets: int
    net_span_scale: float
    ff_count: int
    tau: float
    smoothing_k: int
    size_class: str
    family: str

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.smoothing_k < 1 or self.smoothing_k % 2 == 0:
            raise ValueError(f"smoothing_k must be odd and >= 1, got {self.smoothing_k}")
        if self.size_class not in SIZE_CLASS_GRID:
            raise ValueError(f"unknown size_class {self.size_class!r}")
        if self.num_macros < 0 or self.num_nets < 0 or self.ff_count < 0:
            raise ValueError("counts must be nonnegative")
        lo, hi = self.macro_size_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad macro_size_range {self.macro_size_range}")

    @property
    def grid(self) -> int:
        return SIZE_CLASS_GRID[self.size_class]


@dataclass
class LayoutSample:
    """One layout: feature tensor (d, h, c) in [0,1] and optional binary label (d, h)."""

    id: str
    design_name: str
    family: str
    size_class: str
    features: np.ndarray
    label: np.ndarray | None = None


@dataclass
class LithoClip:
    """One litho clip: binary pattern (d, h) and its pairwise-spacing hotspot label."""

    id: str
    pattern: np.ndarray
    hotspot: bool


@dataclass(frozen=True)
class ClipParams:
    """Litho clip generator parameters.

    A clip is hotspot iff some pair of placed rectangles has
    center-to-center Euclidean distance < ``s_min`` (in cells).
    """

    grid: int = 32
    num_rects_range: tuple[int, int] = (2, 5)
    rect_size_range: tuple[int, int] = (3, 6)
    s_min: float = 12.0


@dataclass
class Split:
    """Four-way design-disjoint partition of sample ids."""

    victim_train: list[str]
    test: list[str]
    attacker_unlabeled: list[str]
    attacker_labeled: list[str]

    def as_dict(self) -> dict[str, list[str]]:
        return {
            "victim_train": list(self.victim_train),
            "test": list(self.test),
            "attacker_unlabeled": list(self.attacker_unlabeled),
            "attacker_labeled": list(self.attacker_labeled),
        }

    @staticmethod
    def from_dict(d: dict) -> "Split":
        return Split(
            victim_train=list(d["victim_train"]),
            test=list(d["test"]),
            attacker_unlabeled=list(d["attacker_unlabeled"]),
            attacker_labeled=list(d["attacker_labeled"]),
        )


@dataclass(frozen=True)
class OracleParams:
    """Labeling-oracle parameters: threshold, filter window, score weights."""

    tau: float
    smoothing_k: int
    w_net: float = W_NET
    w_density: float = W_DENSITY


@dataclass(frozen=True)
class FamilyConfig:
    """Per-family generator distribution. Families deliberately differ to
    manufacture heterogeneity between benchmark groups."""

    name: str
    num_designs: int
    layouts_per_design: int
    size_class: str
    num_macros_range: tuple[int, int]
    num_nets: int
    net_span_scale: float
    ff_count: int


@dataclass(frozen=True)
class DatasetConfig:
    global_seed: int
    families: tuple[FamilyConfig, ...]
    smoothing_k: int = 3
    target_rate: float = 0.15
    rate_tolerance: float = 0.03
    make_split: bool = True


def default_dataset_config(global_seed: int = 2039) -> DatasetConfig:
    """The frozen default build: 30 designs x 34 layouts = 1020 samples
    across five families spanning the three size classes. The flat family
    carries near-threshold fine-grain labels and is deliberately the hard
    part of the benchmark."""
    return DatasetConfig(
        global_seed=global_seed,
        families=(
            FamilyConfig("ring", 7, 34, "small", (0, 1), 26, 2.5, 8),
            FamilyConfig("core", 6, 34, "middle", (0, 1), 55, 3.5, 12),
            FamilyConfig("mesh", 6, 34, "middle", (2, 4), 60, 4.5, 12),
            FamilyConfig("flat", 3, 34, "middle", (0, 0), 420, 0.2, 4),
            FamilyConfig("tile", 8, 34, "large", (3, 6), 100, 6.0, 18),
        ),
    )


@dataclass
class SampleRecord:
    """Manifest row describing one stored sample file."""

    id: str
    design: str
    family: str
    size_class: str
    file: str
    d: int
    h: int
    c: int
    feature_offset: int
    label_offset: int


@dataclass
class DatasetManifest:
    generator_version: str
    global_seed: int
    samples: list[SampleRecord]
    split: Split | None
    oracle_params: dict

    def as_dict(self) -> dict:
        return {
            "generator_version": self.generator_version,
            "global_seed": self.global_seed,
            "samples": [vars(s).copy() for s in self.samples],
            "split": self.split.as_dict() if self.split is not None else None,
            "oracle_params": dict(self.oracle_params),
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        return DatasetManifest(
            generator_version=d["generator_version"],
            global_seed=d["global_seed"],
            samples=[SampleRecord(**s) for s in d["samples"]],
            split=Split.from_dict(d["split"]) if d["split"] is not None else None,
            oracle_params=d["oracle_params"],
        )


def _derive_seed(*parts) -> int:
    """Stable child seed from heterogeneous parts (ints and strings)."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            digest = hashlib.sha256(p.encode()).digest()[:4]
            ints.append(int.from_bytes(digest, "little"))
        else:
            ints.append(int(p))
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0])


def generate_design(spec: DesignSpec) -> LayoutSample:
    """Generate the feature tensor for one layout (label left unset).

    The RNG draw order is part of the contract so placements can be
    replayed independently:

      1. macros: per attempt, draws (width, height, x0, y0) until
         ``num_macros`` non-overlapping rectangles are placed; raises
         GenerationError after ``10 * num_macros`` rejected attempts
      2. nets: per net, draws (x0, y0, span_x, span_y) with spans
         ``1 + int(exponential(net_span_scale))``, clipped to the grid
      3. density sites: two uniform vectors xs, ys of length num_nets
      4. flip-flop sites: two integer vectors ffx, ffy of length ff_count

    Returns features of shape (d, h, 4), float32, all values in [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.grid
    features = np.zeros((n, n, CHANNELS), dtype=np.float64)

    # Channel 0: macro occupancy.
    lo, hi = spec.macro_size_range
    placed: list[tuple[int, int, int, int]] = []
    rejected = 0
    while len(placed) < spec.num_macros:
        mw = int(rng.integers(lo, hi + 1))
        mh = int(rng.integers(lo, hi + 1))
        x0 = int(rng.integers(0, n - mw + 1))
        y0 = int(rng.integers(0, n - mh + 1))
        overlaps = any(
            x0 < px + pw and px < x0 + mw and y0 < py + ph and py < y0 + mh
            for px, py, pw, ph in placed
        )
        if overlaps:
            rejected += 1
            if rejected > 10 * spec.num_macros:
                raise GenerationError(
                    f"macro placement failed after {rejected} rejections for spec {spec}"
                )
            continue
        placed.append((x0, y0, mw, mh))
        features[x0 : x0 + mw, y0 : y0 + mh, 0] = 1.0

    # Channel 1: net bounding-box density.
    for _ in range(spec.num_nets):
        x0 = int(rng.integers(0, n))
        y0 = int(rng.integers(0, n))
        wx = 1 + int(rng.exponential(spec.net_span_scale))
        wy = 1 + int(rng.exponential(spec.net_span_scale))
        x1 = min(n, x0 + wx)
        y1 = min(n, y0 + wy)
        area = (x1 - x0) * (y1 - y0)
        features[x0:x1, y0:y1, 1] += 1.0 / area
    np.minimum(features[:, :, 1], NET_CAP, out=features[:, :, 1])
    features[:, :, 1] /= NET_CAP

    # Channel 2: cell/pin density as Gaussian bumps.
    xs = rng.uniform(0.0, n, size=spec.num_nets)
    ys = rng.uniform(0.0, n, size=spec.num_nets)
    centers = np.arange(n, dtype=np.float64) + 0.5
    gx = centers[:, None]
    gy = centers[None, :]
    dens = np.zeros((n, n), dtype=np.float64)
    for x, y in zip(xs, ys):
        dens += np.exp(-((gx - x) ** 2 + (gy - y) ** 2) / (2.0 * DENSITY_SIGMA**2))
    np.minimum(dens, DENSITY_CAP, out=dens)
    features[:, :, 2] = dens / DENSITY_CAP

    # Channel 3: clock tree over flip-flop sites (greedy nearest-predecessor
    # tree, edges rasterized as horizontal-then-vertical runs).
    ffx = rng.integers(0, n, size=spec.ff_count)
    ffy = rng.integers(0, n, size=spec.ff_count)
    clock = features[:, :, 3]
    for i in range(spec.ff_count):
        clock[ffx[i], ffy[i]] = 1.0
    for i in range(1, spec.ff_count):
        dx = ffx[:i] - ffx[i]
        dy = ffy[:i] - ffy[i]
        j = int(np.argmin(dx * dx + dy * dy))
        xa, ya = int(ffx[i]), int(ffy[i])
        xb, yb = int(ffx[j]), int(ffy[j])
        clock[min(xa, xb) : max(xa, xb) + 1, ya] = 1.0
        clock[xb, min(ya, yb) : max(ya, yb) + 1] = 1.0

    np.clip(features, 0.0, 1.0, out=features)
    return LayoutSample(
        id="",
        design_name="",
        family=spec.family,
        size_class=spec.size_class,
        features=features.astype(np.float32),
    )


def mean_filter(grid: np.ndarray, k: int) -> np.ndarray:
    """Mean filter with a k x k window clipped at the borders.

    Each output cell is the mean over the in-bounds part of its window.
    Implemented as a fixed-order accumulation of shifted zero-padded
    copies, so a naive per-cell loop that sums window elements in
    row-major order reproduces it bitwise.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {k}")
    if k == 1:
        return grid.astype(np.float64).copy()
    r = k // 2
    d, h = grid.shape
    padded = np.zeros((d + 2 * r, h + 2 * r), dtype=np.float64)
    padded[r : r + d, r : r + h] = grid
    counts = np.zeros((d + 2 * r, h + 2 * r), dtype=np.float64)
    counts[r : r + d, r : r + h] = 1.0
    acc = np.zeros((d, h), dtype=np.float64)
    cnt = np.zeros((d, h), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            acc += padded[di : di + d, dj : dj + h]
            cnt += counts[di : di + d, dj : dj + h]
    return acc / cnt


def oracle_label(features: np.ndarray, params: OracleParams) -> np.ndarray:
    """Rule-based congestion labels: smoothed weighted density over threshold,
    masked to zero inside macros. Pure function of its inputs."""
    if features.ndim != 3 or features.shape[2] < 3:
        raise ValueError(f"expected (d, h, c>=3) features, got {features.shape}")
    fx = features.astype(np.float64)
    score = mean_filter(params.w_net * fx[:, :, 1] + params.w_density * fx[:, :, 2], params.smoothing_k)
    label = (score > params.tau) & (fx[:, :, 0] == 0.0)
    return label.astype(np.uint8)


def hotspot_rule(rects: list[tuple[int, int, int, int]], s_min: float) -> bool:
    """True iff any two rectangles (x0, y0, w, h) sit at center-to-center
    Euclidean distance < s_min. This documented rule is the label oracle."""
    centers = [(x0 + w / 2.0, y0 + h / 2.0) for x0, y0, w, h in rects]
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            dx = centers[i][0] - centers[j][0]
            dy = centers[i][1] - centers[j][1]
            if (dx * dx + dy * dy) ** 0.5 < s_min:
                return True
    return False


def generate_clip(seed: int, params: ClipParams) -> LithoClip:
    """Generate one litho clip: disjoint rectangles (at least one empty cell
    between shapes, so each stays a distinct connected component) on a
    binary grid, hotspot label from the exhaustive pairwise spacing check."""
    rng = np.random.default_rng(seed)
    n = params.grid
    count = int(rng.integers(params.num_rects_range[0], params.num_rects_range[1] + 1))
    lo, hi = params.rect_size_range
    rects: list[tuple[int, int, int, int]] = []
    attempts = 0
    while len(rects) < count and attempts < 200:
        attempts += 1
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        x0 = int(rng.integers(0, n - w + 1))
        y0 = int(rng.integers(0, n - h + 1))
        if any(x0 - 1 < px + pw and px < x0 + w + 1 and y0 - 1 < py + ph and py < y0 + h + 1
               for px, py, pw, ph in rects):
            continue
        rects.append((x0, y0, w, h))
    pattern = np.zeros((n, n), dtype=np.uint8)
    for x0, y0, w, h in rects:
        pattern[x0 : x0 + w, y0 : y0 + h] = 1
    return LithoClip(id=f"clip-{seed}", pattern=pattern, hotspot=hotspot_rule(rects, params.s_min))


def generate_clips(n: int, seed: int, params: ClipParams) -> list[LithoClip]:
    """Generate ``n`` clips with per-clip seeds derived from ``seed``."""
    return [generate_clip(_derive_seed(seed, i), params) for i in range(n)]


def _design_specs(config: DatasetConfig) -> dict[str, list[DesignSpec]]:
    """Design-level parameters are drawn once per design; layouts of the
    same design share them and differ only by layout seed."""
    specs: dict[str, list[DesignSpec]] = {}
    for fam in config.families:
        fam_rng = np.random.default_rng(_derive_seed(config.global_seed, fam.name))
        for di in range(fam.num_designs):
            design = f"{fam.name}{di:02d}"
            num_macros = int(fam_rng.integers(fam.num_macros_range[0], fam.num_macros_range[1] + 1))
            nets = int(round(fam.num_nets * float(fam_rng.uniform(0.85, 1.15))))
            span = float(fam.net_span_scale * fam_rng.uniform(0.85, 1.15))
            layouts = []
            for li in range(fam.layouts_per_design):
                layouts.append(
                    DesignSpec(
                        seed=_derive_seed(config.global_seed, design, li),
                        num_macros=num_macros,
                        macro_size_range=(max(2, SIZE_CLASS_GRID[fam.size_class] // 8),
                                          max(3, SIZE_CLASS_GRID[fam.size_class] // 5)),
                        num_nets=nets,
                        net_span_scale=span,
                        ff_count=fam.ff_count,
                        tau=0.5,  # placeholder; replaced after calibration
                        smoothing_k=config.smoothing_k,
                        size_class=fam.size_class,
                        family=fam.name,
                    )
                )
            specs[design] = layouts
    return specs


def calibrate_tau(
    feature_sets: list[np.ndarray],
    smoothing_k: int,
    target_rate: float,
    tolerance: float,
    max_steps: int = 40,
) -> float:
    """Bisect the oracle threshold until the mean positive rate over the
    given feature tensors is within ``tolerance`` of ``target_rate``."""

    def rate(tau: float) -> float:
        p = OracleParams(tau=tau, smoothing_k=smoothing_k)
        return float(np.mean([oracle_label(f, p).mean() for f in feature_sets]))

    lo, hi = 1e-6, 1.0 - 1e-6
    if rate(lo) < target_rate - tolerance:
        raise CalibrationError(
            f"max achievable positive rate {rate(lo):.3f} below target {target_rate}"
        )
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        if abs(r - target_rate) <= tolerance:
            return mid
        if r > target_rate:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"tau calibration did not converge in {max_steps} bisection steps"
    )


def build_dataset(config: DatasetConfig, out_dir: str) -> DatasetManifest:
    """Generate, label, and store the full dataset under ``out_dir``.

    Per sample, one raw file holds the float32 little-endian row-major
    channel-last feature tensor at ``feature_offset`` followed by the
    uint8 label grid at ``label_offset``. The oracle threshold is
    calibrated per family by bisection to the configured positive rate.
    """
    os.makedirs(out_dir, exist_ok=True)
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)

    specs = _design_specs(config)
    generated: dict[str, list[LayoutSample]] = {}
    for design, layout_specs in specs.items():
        layouts = []
        for li, sp in enumerate(layout_specs):
            sample = generate_design(sp)
            sample.id = f"{design}-{li:03d}"
            sample.design_name = design
            layouts.append(sample)
        generated[design] = layouts

    taus: dict[str, float] = {}
    for fam in config.families:
        fam_features = [
            s.features
            for design, layouts in generated.items()
            if design.startswith(fam.name)
            for s in layouts
        ]
        taus[fam.name] = calibrate_tau(
            fam_features, config.smoothing_k, config.target_rate, config.rate_tolerance
        )

    records: list[SampleRecord] = []
    for design in sorted(generated):
        for sample in generated[design]:
            params = OracleParams(tau=taus[sample.family], smoothing_k=config.smoothing_k)
            sample.label = oracle_label(sample.features, params)
            d, h, c = sample.features.shape
            fname = f"{sample.id}.bin"
            feat = np.ascontiguousarray(sample.features, dtype="<f4")
            with open(os.path.join(samples_dir, fname), "wb") as f:
                f.write(feat.tobytes())
                f.write(np.ascontiguousarray(sample.label, dtype=np.uint8).tobytes())
            records.append(
                SampleRecord(
                    id=sample.id,
                    design=design,
                    family=sample.family,
                    size_class=sample.size_class,
                    file=os.path.join("samples", fname),
                    d=d,
                    h=h,
                    c=c,
                    feature_offset=0,
                    label_offset=d * h * c * 4,
                )
            )

    manifest = DatasetManifest(
        generator_version=GENERATOR_VERSION,
        global_seed=config.global_seed,
        samples=records,
        split=None,
        oracle_params={
            "tau": {k: taus[k] for k in sorted(taus)},
            "smoothing_k": config.smoothing_k,
            "weights": [W_NET, W_DENSITY],
            "target_rate": config.target_rate,
        },
    )
    if config.make_split:
        manifest.split = split_dataset(manifest, seed=config.global_seed)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def split_dataset(manifest: DatasetManifest, seed: int) -> Split:
    """Partition samples 40/10/40/10 at design granularity.

    Designs are shuffled by ``seed`` and greedily assigned to the
    partition with the largest remaining sample deficit, so no design
    ever straddles two partitions. Raises SplitError when fewer than
    10 designs exist or any ratio lands outside +/-2 points.
    """
    by_design: dict[str, list[str]] = {}
    for rec in manifest.samples:
        by_design.setdefault(rec.design, []).append(rec.id)
    designs = sorted(by_design)
    if len(designs) < 10:
        raise SplitError(f"need at least 10 designs to split, got {len(designs)}")

    rng = np.random.default_rng(seed)
    order = [designs[i] for i in rng.permutation(len(designs))]
    total = sum(len(v) for v in by_design.values())
    names = list(SPLIT_RATIOS)
    assigned: dict[str, list[str]] = {k: [] for k in names}
    counts = {k: 0 for k in names}
    for design in order:
        deficits = {k: SPLIT_RATIOS[k] * total - counts[k] for k in names}
        bucket = max(names, key=lambda k: deficits[k])
        assigned[bucket].extend(sorted(by_design[design]))
        counts[bucket] += len(by_design[design])

    for k in names:
        frac = counts[k] / total
        if abs(frac - SPLIT_RATIOS[k]) > SPLIT_TOLERANCE:
            raise SplitError(
                f"partition {k} holds {frac:.3f} of samples, "
                f"target {SPLIT_RATIOS[k]:.2f} +/- {SPLIT_TOLERANCE}"
            )
    return Split(
        victim_train=sorted(assigned["victim_train"]),
        test=sorted(assigned["test"]),
        attacker_unlabeled=sorted(assigned["attacker_unlabeled"]),
        attacker_labeled=sorted(assigned["attacker_labeled"]),
    )


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    with open(path, "w") as f:
        json.dump(manifest.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path: str) -> DatasetManifest:
    with open(path) as f:
        return DatasetManifest.from_dict(json.load(f))


def load_sample(dataset_dir: str, record: SampleRecord) -> LayoutSample:
    """Read one stored sample back into memory."""
    path = os.path.join(dataset_dir, record.file)
    with open(path, "rb") as f:
        raw = f.read()
    nfeat = record.d * record.h * record.c
    features = np.frombuffer(
        raw, dtype="<f4", count=nfeat, offset=record.feature_offset
    ).reshape(record.d, record.h, record.c)
    label = np.frombuffer(
        raw, dtype=np.uint8, count=record.d * record.h, offset=record.label_offset
    ).reshape(record.d, record.h)
    return LayoutSample(
        id=record.id,
        design_name=record.design,
        family=record.family,
        size_class=record.size_class,
        features=features.copy(),
        label=label.copy(),
    )


def load_samples(dataset_dir: str, manifest: DatasetManifest, ids: list[str] | None = None) -> list[LayoutSample]:
    """Load samples by id (all samples when ids is None), in manifest order."""
    wanted = None if ids is None else set(ids)
    out = []
    for rec in manifest.samples:
        if wanted is None or rec.id in wanted:
            out.append(load_sample(dataset_dir, rec))
    if wanted is not None and len(out) != len(wanted):
        missing = wanted - {s.id for s in out}
        raise KeyError(f"ids not in manifest: {sorted(missing)[:5]}")
    return out


def save_tensor(path: str, tensor: np.ndarray) -> None:
    """Store a float tensor in the dataset's raw float32 file format."""
    np.ascontiguousarray(tensor, dtype="<f4").tofile(path)


def load_tensor(path: str, shape: tuple[int, ...]) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape)
