"""Artifact and report emission shared by the CLI subcommands.

Every artifact directory carries a provenance block (resolved config,
config hash, seed, generator version, scenario tag) so any result can be
reproduced from its own header. ``emit_report`` consolidates a finished
run into per-table CSVs and one JSON document; it is idempotent and its
outputs are byte-identical across invocations.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Any

from .config import ExperimentConfig, config_hash, config_to_dict
from .synthgrid import GENERATOR_VERSION


class ReportError(RuntimeError):
    pass


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "generator_version": GENERATOR_VERSION,
        "scenario": cfg.scenario,
    }


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def write_csv(path: str, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def fresh_dir(path: str) -> str:
    """Create an artifact directory; refuse to reuse a non-empty one so
    finished runs stay immutable."""
    if os.path.isdir(path) and os.listdir(path):
        raise ReportError(f"output directory {path!r} already holds artifacts; use a new directory")
    os.makedirs(path, exist_ok=True)
    return path


def write_pgm(path: str, grid) -> None:
    """8-bit grayscale PGM of a [0,1] grid (simple, dependency-free image)."""
    import numpy as np

    arr = np.asarray(grid, dtype=np.float64)
    img = np.clip(arr * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


EXPECTED_ARTIFACTS = {
    "extraction": "extraction/extraction_report.json",
    "defense": "defense/defense_report.json",
    "reliability_table": "reliability/size_table.json",
    "reliability_scatter": "reliability/scatter.csv",
}


def emit_report(run_root: str) -> str:
    """Consolidate a finished run directory into report/ with one CSV per
    reference-table analogue plus the scatter SVG. Raises ReportError
    naming every missing artifact."""
    missing = [rel for rel in EXPECTED_ARTIFACTS.values()
               if not os.path.isfile(os.path.join(run_root, rel))]
    if missing:
        raise ReportError(f"run at {run_root!r} is incomplete; expected artifacts: {missing}")

    extraction = read_json(os.path.join(run_root, EXPECTED_ARTIFACTS["extraction"]))
    defense = read_json(os.path.join(run_root, EXPECTED_ARTIFACTS["defense"]))
    size_table = read_json(os.path.join(run_root, EXPECTED_ARTIFACTS["reliability_table"]))

    out_dir = os.path.join(run_root, "report")
    os.makedirs(out_dir, exist_ok=True)

    ext = extraction["report"]
    write_csv(
        os.path.join(out_dir, "table2.csv"),
        ["model", "training_data", "auc"],
        [
            ["victim", "40% labeled data", f"{ext['victim_auc']:.6f}"],
            ["attack_baseline", "10% labeled data", f"{ext['baseline_auc']:.6f}"],
            ["attack_model_1", "40% unlabeled data", f"{ext['attack1_auc']:.6f}"],
            ["attack_model_2", "40% unlabeled + 10% labeled data", f"{ext['attack2_auc']:.6f}"],
        ],
    )
    dfn = defense["report"]
    write_csv(
        os.path.join(out_dir, "table3.csv"),
        ["model", "auc", "attack_success"],
        [
            ["vanilla", f"{dfn['vanilla']['auc']:.6f}", f"{dfn['vanilla']['attack_success']:.6f}"],
            ["robust", f"{dfn['robust']['auc']:.6f}", f"{dfn['robust']['attack_success']:.6f}"],
        ],
    )
    tbl = size_table["table"]
    write_csv(
        os.path.join(out_dir, "table4.csv"),
        ["test_on"] + list(tbl["cols"]),
        [[row] + [f"{v:.6f}" for v in vals] for row, vals in zip(tbl["rows"], tbl["values"])],
    )

    # Regenerate the scatter SVG from the stored points so the report is
    # self-contained and byte-stable.
    import numpy as np

    from .reliability import write_scatter_svg

    pts, fams = [], []
    with open(os.path.join(run_root, EXPECTED_ARTIFACTS["reliability_scatter"])) as f:
        for row in csv.DictReader(f):
            pts.append((float(row["x"]), float(row["y"])))
            fams.append(row["family"])
    write_scatter_svg(os.path.join(out_dir, "scatter.svg"), np.array(pts), fams)

    consolidated = {
        "extraction": ext,
        "defense": dfn,
        "size_table": tbl,
        "provenance": {
            "extraction": extraction.get("provenance"),
            "defense": defense.get("provenance"),
            "reliability": size_table.get("provenance"),
        },
    }
    write_json(os.path.join(out_dir, "consolidated.json"), consolidated)
    return out_dir
