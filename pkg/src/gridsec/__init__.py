"""gridsec: attack, defense, and reliability experiments for grid-based
layout predictors on a deterministic synthetic routability surrogate.

Subpackages by concern:

    synthgrid      dataset generator, labeling oracle, splits, file formats
    modelcore      reference predictor, trainer, metrics, checkpoints
    inversion      BN-statistics reconstruction attack (design privacy)
    extraction     pseudo-label model extraction (model competitiveness)
    advattack      FGSM / PGD / SRAF insertion / backdoor poisoning
    defense        curvature-regularized training, dilution augmentation
    reliability    descriptors, PCA, OOD warnings, size-partition study
    decentralized  federated averaging with optional poisoner clients
    cli            experiment harness (one artifact directory per run)
"""

from . import (
    advattack,
    decentralized,
    defense,
    extraction,
    inversion,
    modelcore,
    reliability,
    synthgrid,
)

__version__ = "0.1.0"

__all__ = [
    "advattack",
    "decentralized",
    "defense",
    "extraction",
    "inversion",
    "modelcore",
    "reliability",
    "synthgrid",
    "__version__",
]
